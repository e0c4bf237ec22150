#pragma once

#include <vector>

#include "dsqn/network.hpp"

namespace dsqn {

struct CaseStudyRow {
  double input_current = 0;
  double last_mem = 0;
  double max_mem = 0;
  double mean_mem = 0;
};

// Minimal two-unit chain (one LIF feeding one LI, both weights fixed at 1)
// driven by a constant scalar current, decoded three ways per probe point.
// Exposes how the spike-then-reset dynamics make the final voltage a
// non-monotonic function of the input while the running maximum is not.
inline std::vector<CaseStudyRow> case_study_sweep(int sim_steps, const NeuronConfig& cfg,
                                                  double i_min, double i_max, int points) {
  DSQN_REQUIRE(points >= 2, "need at least two probe points");
  DSQN_REQUIRE(i_max >= i_min, "empty probe range");

  std::vector<LayerSpec> specs(2);
  specs[0].kind = LayerKind::Dense;
  specs[0].out = 1;
  specs[0].neuron = NeuronKind::Lif;
  specs[0].cfg = cfg;
  specs[1].kind = LayerKind::Dense;
  specs[1].out = 1;
  specs[1].neuron = NeuronKind::Li;
  specs[1].cfg = cfg;
  QNetwork<double> net =
      make_network<double>({1, 1, 1}, std::move(specs), sim_steps, DecoderKind::LastMem);
  net.params[0](0, 0) = 1.0;
  net.params[1](0, 0) = 1.0;

  std::vector<CaseStudyRow> rows;
  rows.reserve(points);
  for (int p = 0; p < points; ++p) {
    const double current =
        i_min + (i_max - i_min) * static_cast<double>(p) / static_cast<double>(points - 1);
    Vec<double> obs(1);
    obs[0] = current;
    const VoltageTrace<double> trace = forward(net, obs);
    CaseStudyRow row;
    row.input_current = current;
    row.last_mem = decode(trace.li_history, DecoderKind::LastMem)[0];
    row.max_mem = decode(trace.li_history, DecoderKind::MaxMem)[0];
    row.mean_mem = decode(trace.li_history, DecoderKind::MeanMem)[0];
    rows.push_back(row);
  }
  return rows;
}

}  // namespace dsqn
