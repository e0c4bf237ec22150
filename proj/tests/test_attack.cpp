#include <doctest.h>

#include <dsqn/attack.hpp>
#include <dsqn/envs.hpp>
#include <dsqn/runtime.hpp>

#include <nlohmann/json.hpp>

using namespace dsqn;

namespace {

QNetwork<float> catch_net(std::uint64_t seed) {
  CatchEnv env;
  NeuronConfig cfg;
  auto specs = parse_architecture("Flatten-32-LIF-NA-LI", env.action_count(), cfg);
  auto net = make_network<float>(env.observation_shape(), specs, 4, DecoderKind::MaxMem);
  Rng rng(seed);
  init_params(net, rng);
  return net;
}

Vec<float> catch_obs(std::uint64_t seed) {
  CatchEnv env;
  return preprocess<float>(env.reset(seed), env);
}

}  // namespace

TEST_CASE("zero-budget perturbations vanish") {
  const auto net = catch_net(1);
  const auto x = catch_obs(2);
  const Vec<float> eta = fgsm_perturb(net, x, 0.0);
  CHECK(eta.cwiseAbs().maxCoeff() == 0.0f);
}

TEST_CASE("perturbations are sign steps of size epsilon") {
  const auto net = catch_net(3);
  const auto x = catch_obs(4);
  const double eps = 0.03;
  const Vec<float> eta = fgsm_perturb(net, x, eps);
  REQUIRE(eta.size() == x.size());

  int nonzero = 0;
  for (int i = 0; i < eta.size(); ++i) {
    const float v = eta[i];
    REQUIRE((v == 0.0f || v == static_cast<float>(eps) || v == -static_cast<float>(eps)));
    if (v != 0.0f) ++nonzero;
  }
  CHECK(nonzero > 0);  // a live network has a nonzero input gradient somewhere
}

TEST_CASE("perturbation direction follows the loss gradient") {
  const auto net = catch_net(5);
  const auto x = catch_obs(6);

  // Recompute the cross-entropy input gradient independently via the tape.
  const auto trace = forward(net, x);
  const int clean = greedy_action(trace.q);
  Vec<float> p = (trace.q.array() - trace.q.maxCoeff()).exp().matrix();
  p /= p.sum();
  Vec<float> seed = p;
  seed[clean] -= 1.0f;
  const auto g = backward_tape(trace, net, seed);

  const double eps = 0.01;
  const Vec<float> eta = fgsm_perturb(net, x, eps, clean);
  for (int i = 0; i < eta.size(); ++i) {
    if (std::abs(g.input[i]) > 1e-4f) {
      REQUIRE(eta[i] == (g.input[i] > 0 ? 1.0f : -1.0f) * static_cast<float>(eps));
    }
  }
}

TEST_CASE("iterative attack with zero epsilon is the identity") {
  const auto net = catch_net(7);
  const auto x = catch_obs(8);
  AttackConfig cfg;
  cfg.epsilon = 0.0;
  const auto out = iterative_attack(net, x, cfg);
  CHECK(out.x_adv == x);
  CHECK_FALSE(out.flipped);
  CHECK(out.iters == 0);
}

TEST_CASE("a constant network cannot be flipped") {
  auto net = catch_net(9);
  for (auto& p : net.params) p.setZero();
  const auto x = catch_obs(10);
  AttackConfig cfg;
  cfg.epsilon = 0.05;
  cfg.max_iters = 10;
  const auto out = iterative_attack(net, x, cfg);
  CHECK_FALSE(out.flipped);
  CHECK(out.iters == 10);
  CHECK(out.x_adv == x);  // zero gradient means zero movement
}

TEST_CASE("iterative attacks respect the step budget and the clip box") {
  const auto net = catch_net(11);
  AttackConfig cfg;
  cfg.epsilon = 0.03;
  cfg.max_iters = 50;
  for (std::uint64_t s = 0; s < 10; ++s) {
    const auto x = catch_obs(20 + s);
    const auto out = iterative_attack(net, x, cfg);
    REQUIRE(out.iters <= cfg.max_iters);
    const double budget = cfg.epsilon * cfg.max_iters + 1e-6;
    REQUIRE((out.x_adv - x).cast<double>().cwiseAbs().maxCoeff() <= budget);
    REQUIRE(out.x_adv.minCoeff() >= 0.0f);
    REQUIRE(out.x_adv.maxCoeff() <= 1.0f);
    if (out.flipped) {
      REQUIRE(greedy_action(q_values(net, out.x_adv)) != greedy_action(q_values(net, x)));
    }
  }
}

TEST_CASE("attack configuration is validated") {
  AttackConfig cfg;
  SUBCASE("negative epsilon") {
    cfg.epsilon = -0.1;
    CHECK_THROWS_AS(validate(cfg), ContractViolation);
  }
  SUBCASE("zero iterations") {
    cfg.max_iters = 0;
    CHECK_THROWS_AS(validate(cfg), ContractViolation);
  }
  SUBCASE("empty clip box") {
    cfg.clip_lo = 1.0;
    cfg.clip_hi = 0.0;
    CHECK_THROWS_AS(validate(cfg), ContractViolation);
  }
}

TEST_CASE("score decay percentage matches the worked examples") {
  // 5211.5 before, 2055.0 after: (5211.5 - 2055) / 5211.5 * 100 = 60.57%.
  const auto decay = decay_rate_percent(5211.5, 2055.0);
  REQUIRE(decay.has_value());
  CHECK(*decay == doctest::Approx(60.568).epsilon(1e-4));
  CHECK(std::abs(*decay - 60.57) < 0.01);

  const auto fifth = decay_rate_percent(100.0, 80.0);
  REQUIRE(fifth.has_value());
  CHECK(*fifth == doctest::Approx(20.0).epsilon(1e-12));

  // Non-positive clean scores make the ratio meaningless.
  CHECK_FALSE(decay_rate_percent(0.0, -1.0).has_value());
  CHECK_FALSE(decay_rate_percent(-1.0, -2.0).has_value());

  // Scores can get worse than zero: the rate may exceed 100%.
  const auto worse = decay_rate_percent(10.0, -5.0);
  REQUIRE(worse.has_value());
  CHECK(*worse == doctest::Approx(150.0).epsilon(1e-12));
}

TEST_CASE("attacked evaluation with zero epsilon reproduces clean play") {
  const auto net = catch_net(13);
  CatchEnv env;
  AttackConfig cfg;
  cfg.epsilon = 0.0;
  cfg.episodes = 12;

  const AttackReport rep = attacked_eval(net, env, cfg, 0.05, 4, 777);

  Rng rng(777);
  CatchEnv clean_env;
  const EvalResult clean = evaluate(net, clean_env, 12, 0.05, 4, rng);

  REQUIRE(rep.returns_before == clean.returns);
  REQUIRE(rep.returns_after == clean.returns);
  CHECK(rep.before == clean.mean);
  CHECK(rep.after == clean.mean);
  CHECK(rep.flip_fraction == 0.0);
  CHECK(rep.max_linf == 0.0);
}

TEST_CASE("attacked evaluation reports are structurally sound") {
  const auto net = catch_net(17);
  CatchEnv env;
  AttackConfig cfg;
  cfg.epsilon = 0.05;
  cfg.max_iters = 5;
  cfg.episodes = 6;

  const AttackReport rep = attacked_eval(net, env, cfg, 0.05, 2, 31);
  CHECK(rep.env == "catch");
  CHECK(rep.epsilon == 0.05);
  CHECK(rep.returns_before.size() == 6);
  CHECK(rep.returns_after.size() == 6);
  CHECK(rep.per_episode_flip_fraction.size() == 6);
  CHECK(rep.flip_fraction >= 0.0);
  CHECK(rep.flip_fraction <= 1.0);
  CHECK(rep.max_linf <= cfg.epsilon * cfg.max_iters + 1e-6);
  for (double f : rep.per_episode_flip_fraction) {
    CHECK(f >= 0.0);
    CHECK(f <= 1.0);
  }

  const auto j = nlohmann::json::parse(to_json_string(rep));
  CHECK(j.at("env") == "catch");
  CHECK(j.at("epsilon") == 0.05);
  CHECK(j.at("max_iters") == 5);
  CHECK(j.contains("before"));
  CHECK(j.contains("after"));
  CHECK(j.contains("decay_rate"));
  CHECK(j.contains("flip_fraction"));
  // Catch returns are negative for an untrained net, so the decay rate is
  // reported as null rather than a misleading ratio.
  if (rep.before <= 0.0) CHECK(j.at("decay_rate").is_null());
}
