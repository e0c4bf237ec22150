#pragma once

#include <algorithm>
#include <string>
#include <vector>

#include "dsqn/grad.hpp"
#include "dsqn/rng.hpp"

namespace dsqn {

// A randomly shaped double-precision problem small enough to sweep with
// finite differences: at most three parameterised layers, at most eight
// units per layer, T <= 8, every decoder, dense and conv synapses.
struct MicroProblem {
  QNetwork<double> net;
  Vec<double> obs;
  Vec<double> seed;
};

inline MicroProblem random_micro_problem(Rng& rng) {
  const int T = 1 + rng.uniform_int(8);
  const DecoderKind decoder = static_cast<DecoderKind>(rng.uniform_int(3));

  NeuronConfig base;
  auto draw_cfg = [&rng]() {
    NeuronConfig cfg;
    cfg.tau = rng.uniform(1.2, 4.0);
    cfg.v_reset = rng.uniform(-0.3, 0.3);
    cfg.v_threshold = cfg.v_reset + rng.uniform(0.3, 1.2);
    return cfg;
  };

  std::vector<LayerSpec> specs;
  TensorShape input;
  const int n_actions = 1 + rng.uniform_int(4);
  if (rng.uniform() < 0.4) {
    // Conv stack: conv-LIF, flatten, dense-LI.
    const int side = 3 + rng.uniform_int(3);
    input = {1 + rng.uniform_int(2), side, side};
    LayerSpec conv;
    conv.kind = LayerKind::Conv2d;
    conv.out_channels = 1 + rng.uniform_int(2);
    conv.kernel = 2 + rng.uniform_int(std::min(side, 3) - 1);
    conv.stride = 1 + rng.uniform_int(2);
    conv.neuron = NeuronKind::Lif;
    conv.cfg = draw_cfg();
    specs.push_back(conv);
    LayerSpec flat;
    flat.kind = LayerKind::Flatten;
    specs.push_back(flat);
    LayerSpec out;
    out.kind = LayerKind::Dense;
    out.out = n_actions;
    out.neuron = NeuronKind::Li;
    out.cfg = draw_cfg();
    specs.push_back(out);
  } else {
    // Dense chain with zero or one hidden LIF layer.
    input = {1 + rng.uniform_int(6), 1, 1};
    const int hidden_layers = rng.uniform_int(2);
    for (int l = 0; l < hidden_layers; ++l) {
      LayerSpec hid;
      hid.kind = LayerKind::Dense;
      hid.out = 1 + rng.uniform_int(8);
      hid.neuron = NeuronKind::Lif;
      hid.cfg = draw_cfg();
      specs.push_back(hid);
    }
    LayerSpec out;
    out.kind = LayerKind::Dense;
    out.out = n_actions;
    out.neuron = NeuronKind::Li;
    out.cfg = draw_cfg();
    specs.push_back(out);
  }

  MicroProblem prob{make_network<double>(input, std::move(specs), T, decoder), {}, {}};
  init_params(prob.net, rng);
  // Stretch the weights so the spiking and sub-threshold regimes both occur.
  const double stretch = rng.uniform(0.5, 3.0);
  for (auto& p : prob.net.params) {
    if (p.size()) p *= stretch;
  }
  prob.obs = Vec<double>(prob.net.input_shape.size());
  for (Eigen::Index i = 0; i < prob.obs.size(); ++i) prob.obs[i] = rng.uniform(-1.0, 1.0);
  prob.seed = Vec<double>(prob.net.num_actions());
  for (Eigen::Index i = 0; i < prob.seed.size(); ++i) prob.seed[i] = rng.uniform(-1.0, 1.0);
  return prob;
}

struct GradCheckSummary {
  int trials = 0;
  int failures = 0;
  // Oracle agreement: structured recursion vs generic tape, hard forward.
  double max_abs_diff = 0;
  // Finite differences on the relaxed forward (when run).
  double max_fd_rel_err = 0;
  bool fd_checked = false;

  bool passed() const { return failures == 0; }
};

// Compares backward_recursive against backward_tape per trial (threshold
// abs_tol on every parameter and on the input gradient) and, optionally,
// against central differences of the relaxed forward (threshold fd_tol).
inline GradCheckSummary run_gradcheck(int trials, std::uint64_t seed, double abs_tol,
                                      bool with_fd, double fd_step, double fd_tol,
                                      const BackwardOptions& opts = {}) {
  DSQN_REQUIRE(trials >= 1, "need at least one trial");
  DSQN_REQUIRE(abs_tol > 0 && fd_step > 0 && fd_tol > 0, "tolerances must be positive");
  GradCheckSummary summary;
  summary.trials = trials;
  Rng rng(seed);

  for (int trial = 0; trial < trials; ++trial) {
    const MicroProblem prob = random_micro_problem(rng);
    bool ok = true;

    const VoltageTrace<double> trace = forward(prob.net, prob.obs);
    const GradientSet<double> a = backward_recursive(trace, prob.net, prob.seed, opts);
    const GradientSet<double> b = backward_tape(trace, prob.net, prob.seed, opts);
    double diff = (a.input - b.input).cwiseAbs().maxCoeff();
    for (std::size_t i = 0; i < a.weights.size(); ++i) {
      if (a.weights[i].size() == 0) continue;
      diff = std::max(diff, (a.weights[i] - b.weights[i]).cwiseAbs().maxCoeff());
    }
    summary.max_abs_diff = std::max(summary.max_abs_diff, diff);
    if (!(diff <= abs_tol) || !a.all_finite() || !b.all_finite()) ok = false;

    if (with_fd) {
      const FdReport fd = fd_check_relaxed(prob.net, prob.obs, prob.seed, fd_step, opts);
      summary.fd_checked = true;
      summary.max_fd_rel_err = std::max(summary.max_fd_rel_err, fd.max_rel_err);
      if (!fd.finite || !(fd.max_rel_err <= fd_tol)) ok = false;
    }
    if (!ok) ++summary.failures;
  }
  return summary;
}

}  // namespace dsqn
