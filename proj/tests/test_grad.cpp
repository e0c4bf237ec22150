#include <doctest.h>

#include <dsqn/grad.hpp>
#include <dsqn/gradcheck.hpp>
#include <dsqn/network.hpp>
#include <dsqn/surrogate.hpp>

#include <numbers>

using namespace dsqn;

namespace {

QNetwork<double> dense_li_net(int in, int out, int sim_steps, DecoderKind dec) {
  LayerSpec spec;
  spec.kind = LayerKind::Dense;
  spec.neuron = NeuronKind::Li;
  spec.out = out;
  return make_network<double>({in, 1, 1}, {spec}, sim_steps, dec);
}

// Two-unit chain: 1-input dense LIF into 1-output dense LI, both weights 1,
// tau = 2, threshold 1, reset 0 — small enough to differentiate by hand.
QNetwork<double> two_unit_chain(int sim_steps, DecoderKind dec) {
  LayerSpec hidden;
  hidden.kind = LayerKind::Dense;
  hidden.neuron = NeuronKind::Lif;
  hidden.out = 1;
  LayerSpec head;
  head.kind = LayerKind::Dense;
  head.neuron = NeuronKind::Li;
  head.out = 1;
  auto net = make_network<double>({1, 1, 1}, {hidden, head}, sim_steps, dec);
  net.params[0](0, 0) = 1.0;
  net.params[1](0, 0) = 1.0;
  return net;
}

}  // namespace

TEST_CASE("surrogate spike relaxation and its derivative") {
  CHECK(surrogate(0.0) == 0.5);
  CHECK(surrogate_grad(0.0) == 1.0);
  // At x = 1/pi the derivative is 1 / (1 + 1) = 0.5 exactly.
  CHECK(surrogate_grad(1.0 / std::numbers::pi) == doctest::Approx(0.5).epsilon(1e-15));
  // Even symmetry and monotone decay of the derivative.
  CHECK(surrogate_grad(0.7) == surrogate_grad(-0.7));
  CHECK(surrogate_grad(2.0) < surrogate_grad(1.0));
  // The relaxation is a CDF-like sigmoid: increasing, range (0, 1).
  CHECK(surrogate(-5.0) > 0.0);
  CHECK(surrogate(5.0) < 1.0);
  CHECK(surrogate(1.0) > surrogate(0.0));
  CHECK(surrogate(10.0) == doctest::Approx(1.0).epsilon(0.05));
}

TEST_CASE("three-step leaky chain matches the hand-derived gradient") {
  // q_last: v_t = drive * (1 - 2^-t) with drive = w * x; w = 0.8, x = 1.5.
  auto net = dense_li_net(1, 1, 3, DecoderKind::LastMem);
  net.params[0](0, 0) = 0.8;
  Vec<double> obs = Vec<double>::Constant(1, 1.5);
  Vec<double> seed = Vec<double>::Constant(1, 1.0);

  const auto trace = forward(net, obs);
  CHECK(trace.q[0] == doctest::Approx(1.05).epsilon(1e-15));

  const auto g = backward_recursive(trace, net, seed);
  // dq/dw = x * (1/2 + 1/4 + 1/8) = 1.5 * 0.875.
  CHECK(g.weights[0](0, 0) == doctest::Approx(1.3125).epsilon(1e-15));
  CHECK(g.input[0] == doctest::Approx(0.8 * 0.875).epsilon(1e-15));

  // Mean decoding averages the partial sums: dq/dw = x * (17/24).
  auto mean_net = net;
  mean_net.decoder = DecoderKind::MeanMem;
  const auto mean_trace = forward(mean_net, obs);
  const auto gm = backward_recursive(mean_trace, mean_net, seed);
  CHECK(gm.weights[0](0, 0) == doctest::Approx(1.5 * 17.0 / 24.0).epsilon(1e-14));
}

TEST_CASE("spiking chain at saturation matches the hand-derived gradient") {
  // Drive 2.0 makes the hidden unit hit the threshold exactly every step
  // (h - v_th = 0, so the surrogate slope is exactly 1), and the output
  // accumulates one spike per step.
  auto net = two_unit_chain(8, DecoderKind::LastMem);
  Vec<double> obs = Vec<double>::Constant(1, 2.0);
  Vec<double> seed = Vec<double>::Constant(1, 1.0);

  const auto trace = forward(net, obs);
  for (int t = 0; t < 8; ++t) REQUIRE(trace.s[0](0, t) == 1.0);
  CHECK(trace.q[0] == 1.0 - std::pow(2.0, -8));  // dyadic, exact

  const auto g = backward_recursive(trace, net, seed);
  // Output weight: sum over spikes of the discounted deposits.
  CHECK(g.weights[1](0, 0) == 0.99609375);
  // Hidden weight: surrogate path with alternating reset cancellation.
  CHECK(g.weights[0](0, 0) == 0.6640625);
  CHECK(g.input[0] == 0.33203125);

  // The generic tape reproduces the same numbers independently.
  const auto t2 = backward_tape(trace, net, seed);
  CHECK(t2.weights[1](0, 0) == 0.99609375);
  CHECK(t2.weights[0](0, 0) == 0.6640625);
  CHECK(t2.input[0] == 0.33203125);
}

TEST_CASE("zero seed produces zero gradients") {
  auto net = two_unit_chain(5, DecoderKind::MaxMem);
  Vec<double> obs = Vec<double>::Constant(1, 1.7);
  Vec<double> seed = Vec<double>::Zero(1);
  const auto trace = forward(net, obs);
  const auto g = backward_recursive(trace, net, seed);
  CHECK(g.weights[0](0, 0) == 0.0);
  CHECK(g.weights[1](0, 0) == 0.0);
  CHECK(g.input[0] == 0.0);
}

TEST_CASE("gradients scale linearly with the seed") {
  Rng rng(404);
  const MicroProblem prob = random_micro_problem(rng);
  const auto trace = forward(prob.net, prob.obs);
  const auto g1 = backward_recursive(trace, prob.net, prob.seed);
  const auto g2 = backward_recursive(trace, prob.net, (2.0 * prob.seed).eval());
  for (std::size_t i = 0; i < g1.weights.size(); ++i) {
    REQUIRE(g2.weights[i] == 2.0 * g1.weights[i]);
  }
  REQUIRE(g2.input == 2.0 * g1.input);
}

TEST_CASE("max decoding reduces to last-step decoding when the peak is final") {
  // A leaky-only net with positive weights and drive rises monotonically,
  // so the peak voltage is attained at the final step.
  auto net = dense_li_net(2, 2, 6, DecoderKind::MaxMem);
  net.params[0] << 0.5, 0.25, 0.125, 0.75;
  Vec<double> obs(2);
  obs << 0.9, 0.4;
  Vec<double> seed(2);
  seed << 1.0, -0.5;

  const auto trace = forward(net, obs);
  for (int i = 0; i < 2; ++i) REQUIRE(trace.argmax_t[i] == 5);

  auto last_net = net;
  last_net.decoder = DecoderKind::LastMem;
  const auto last_trace = forward(last_net, obs);

  const auto gm = backward_recursive(trace, net, seed);
  const auto gl = backward_recursive(last_trace, last_net, seed);
  REQUIRE(gm.weights[0] == gl.weights[0]);
  REQUIRE(gm.input == gl.input);
}

TEST_CASE("structured recursion agrees with the generic tape on random nets") {
  const auto summary = run_gradcheck(40, 2024, 1e-10, false, 1e-4, 1e-4);
  CHECK(summary.trials == 40);
  CHECK(summary.failures == 0);
  CHECK(summary.max_abs_diff <= 1e-10);
  CHECK(summary.passed());
}

TEST_CASE("analytic gradients of the relaxed forward match finite differences") {
  const auto summary = run_gradcheck(15, 515, 1e-10, true, 1e-4, 1e-4);
  CHECK(summary.failures == 0);
  CHECK(summary.fd_checked);
  CHECK(summary.max_fd_rel_err <= 1e-4);
}

TEST_CASE("finite-difference error shrinks quadratically with the probe size") {
  Rng rng(808);
  double worst_ratio = std::numeric_limits<double>::infinity();
  int measured = 0;
  for (int trial = 0; trial < 12 && measured < 5; ++trial) {
    const MicroProblem prob = random_micro_problem(rng);
    const auto coarse = fd_check_relaxed(prob.net, prob.obs, prob.seed, 1e-3);
    const auto fine = fd_check_relaxed(prob.net, prob.obs, prob.seed, 1e-4);
    REQUIRE(coarse.finite);
    REQUIRE(fine.finite);
    // Only ratios above the rounding floor say anything about the order.
    if (coarse.max_abs_err > 1e-9) {
      ++measured;
      worst_ratio = std::min(worst_ratio, coarse.max_abs_err / fine.max_abs_err);
    }
  }
  REQUIRE(measured > 0);
  // An O(h^2) scheme gains ~100x per decade; demand a decade with slack.
  CHECK(worst_ratio >= 10.0);
}

TEST_CASE("a corrupted surrogate slope is caught by finite differences") {
  BackwardOptions corrupt;
  corrupt.surrogate_scale = 0.5;

  // The two engines still agree with each other (both are corrupted)...
  auto net = two_unit_chain(8, DecoderKind::LastMem);
  Vec<double> obs = Vec<double>::Constant(1, 2.0);
  Vec<double> seed = Vec<double>::Constant(1, 1.0);
  const auto trace = forward(net, obs);
  const auto bad = backward_recursive(trace, net, seed, corrupt);
  const auto bad_tape = backward_tape(trace, net, seed, corrupt);
  CHECK(std::abs(bad.weights[0](0, 0) - bad_tape.weights[0](0, 0)) <= 1e-12);

  // ...but differ from the true gradient, and finite differences flag it.
  CHECK(std::abs(bad.weights[0](0, 0) - 0.6640625) > 1e-3);
  const auto summary = run_gradcheck(10, 99, 1e-10, true, 1e-4, 1e-4, corrupt);
  CHECK(summary.failures > 0);
}

TEST_CASE("gradients stay finite across random problems") {
  Rng rng(11);
  for (int trial = 0; trial < 20; ++trial) {
    const MicroProblem prob = random_micro_problem(rng);
    const auto trace = forward(prob.net, prob.obs);
    const auto g = backward_recursive(trace, prob.net, prob.seed);
    REQUIRE(g.all_finite());
  }
}

TEST_CASE("gradient accumulation adds into an existing set") {
  auto net = two_unit_chain(4, DecoderKind::LastMem);
  Vec<double> obs = Vec<double>::Constant(1, 1.9);
  Vec<double> seed = Vec<double>::Constant(1, 1.0);
  const auto trace = forward(net, obs);

  auto acc = GradientSet<double>::zeros_like(net);
  backward_recursive_into(trace, net, seed, {}, acc);
  backward_recursive_into(trace, net, seed, {}, acc);
  const auto once = backward_recursive(trace, net, seed);
  CHECK(acc.weights[0] == 2.0 * once.weights[0]);
  CHECK(acc.weights[1] == 2.0 * once.weights[1]);
  CHECK(acc.input == 2.0 * once.input);
}
