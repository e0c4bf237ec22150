#pragma once

#include "dsqn/check.hpp"
#include "dsqn/types.hpp"

namespace dsqn {

// Membrane parameters shared by spiking (LIF) and non-spiking (LI) units.
// tau > 1 keeps the leak factor 1 - 1/tau inside (0, 1).
struct NeuronConfig {
  double tau = 2.0;
  double v_threshold = 1.0;
  double v_reset = 0.0;

  bool operator==(const NeuronConfig&) const = default;
};

inline void validate(const NeuronConfig& cfg, bool spiking = true) {
  DSQN_REQUIRE(cfg.tau > 1.0, "tau must exceed 1");
  if (spiking) {
    DSQN_REQUIRE(cfg.v_threshold > cfg.v_reset, "threshold must exceed the reset potential");
  }
}

// v: membrane voltage after any reset, h: pre-reset voltage, s: spike output.
// All three have the same length; rest_state() gives the t = 0 condition.
template <class Scalar>
struct NeuronState {
  Vec<Scalar> v;
  Vec<Scalar> h;
  Vec<Scalar> s;
};

template <class Scalar>
NeuronState<Scalar> rest_state(Eigen::Index n, const NeuronConfig& cfg) {
  NeuronState<Scalar> st;
  st.v = Vec<Scalar>::Constant(n, static_cast<Scalar>(cfg.v_reset));
  st.h = st.v;
  st.s = Vec<Scalar>::Zero(n);
  return st;
}

// One discrete leaky integrate-and-fire step: charge toward the input, fire
// wherever h reaches v_threshold (a unit exactly at threshold fires), then
// hard-reset fired units to v_reset.
template <class Scalar>
NeuronState<Scalar> lif_step(const NeuronState<Scalar>& state, const Vec<Scalar>& x,
                             const NeuronConfig& cfg) {
  validate(cfg);
  DSQN_REQUIRE(state.v.size() == x.size(), "input length does not match neuron count");
  const Scalar tau = static_cast<Scalar>(cfg.tau);
  const Scalar vth = static_cast<Scalar>(cfg.v_threshold);
  const Scalar vr = static_cast<Scalar>(cfg.v_reset);

  NeuronState<Scalar> next;
  next.h = (state.v.array() + (x.array() - (state.v.array() - vr)) / tau).matrix();
  next.s = (next.h.array() >= vth).template cast<Scalar>().matrix();
  next.v = (next.h.array() * (Scalar(1) - next.s.array()) + vr * next.s.array()).matrix();
  return next;
}

// Non-spiking leaky integrator: the same charge rule with firing disabled,
// so the post-step voltage equals the charged voltage.
template <class Scalar>
NeuronState<Scalar> li_step(const NeuronState<Scalar>& state, const Vec<Scalar>& x,
                            const NeuronConfig& cfg) {
  validate(cfg, /*spiking=*/false);
  DSQN_REQUIRE(state.v.size() == x.size(), "input length does not match neuron count");
  const Scalar tau = static_cast<Scalar>(cfg.tau);
  const Scalar vr = static_cast<Scalar>(cfg.v_reset);

  NeuronState<Scalar> next;
  next.h = (state.v.array() + (x.array() - (state.v.array() - vr)) / tau).matrix();
  next.v = next.h;
  next.s = Vec<Scalar>::Zero(state.v.size());
  return next;
}

}  // namespace dsqn
