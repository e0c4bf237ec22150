#pragma once

#include <functional>
#include <limits>
#include <vector>

#include "dsqn/network.hpp"

namespace dsqn {

// Gradient of a scalar objective with respect to every network parameter
// and to the observation. Weight slots align with QNetwork::params
// (flatten slots stay empty).
template <class Scalar>
struct GradientSet {
  std::vector<Mat<Scalar>> weights;
  Vec<Scalar> input;

  static GradientSet zeros_like(const QNetwork<Scalar>& net) {
    GradientSet g;
    g.weights.reserve(net.params.size());
    for (const auto& p : net.params) {
      g.weights.push_back(p.size() == 0 ? Mat<Scalar>()
                                        : Mat<Scalar>::Zero(p.rows(), p.cols()));
    }
    g.input = Vec<Scalar>::Zero(net.input_shape.size());
    return g;
  }

  GradientSet& operator+=(const GradientSet& o) {
    DSQN_REQUIRE(weights.size() == o.weights.size(), "gradient layout mismatch");
    for (std::size_t i = 0; i < weights.size(); ++i) {
      if (o.weights[i].size()) weights[i] += o.weights[i];
    }
    input += o.input;
    return *this;
  }

  bool all_finite() const {
    for (const auto& w : weights) {
      if (w.size() && !w.allFinite()) return false;
    }
    return input.allFinite();
  }
};

// surrogate_scale multiplies the step relaxation's derivative everywhere it
// enters a backward pass. 1.0 is the real gradient; other values exist only
// as a negative control for gradient checks.
struct BackwardOptions {
  double surrogate_scale = 1.0;
};

namespace detail {

// Per-timestep objective seed on the output layer's voltage, as dictated by
// the decoder: last_mem touches only t = T-1, mean_mem spreads seed/T over
// all steps, max_mem touches each unit's recorded argmax step.
template <class Scalar>
Mat<Scalar> decoder_voltage_seeds(const VoltageTrace<Scalar>& trace, DecoderKind kind,
                                  const Vec<Scalar>& seed) {
  const Eigen::Index n = trace.li_history.rows();
  const Eigen::Index T = trace.li_history.cols();
  Mat<Scalar> seeds = Mat<Scalar>::Zero(n, T);
  switch (kind) {
    case DecoderKind::LastMem:
      seeds.col(T - 1) = seed;
      break;
    case DecoderKind::MeanMem:
      for (Eigen::Index t = 0; t < T; ++t) seeds.col(t) = seed / static_cast<Scalar>(T);
      break;
    case DecoderKind::MaxMem:
      DSQN_REQUIRE(trace.argmax_t.size() == n, "trace is missing max-decode timesteps");
      for (Eigen::Index o = 0; o < n; ++o) seeds(o, trace.argmax_t[o]) += seed[o];
      break;
  }
  return seeds;
}

}  // namespace detail

// Structured backward sweep over the unrolled simulation, layer by layer
// from the output down. Within each layer the voltage-chain adjoint runs
// backward in time with the leak factor 1 - 1/tau; spiking layers route it
// through the step relaxation's derivative at the firing margin and through
// the reset gate (1 - s) + (v_reset - h) * surrogate_grad(h - v_th). Weight
// gradients accumulate time-descending as adjoint/tau against the step's
// synapse input, and the same adjoint pulled through the synapse transpose
// seeds the layer below. On a Smoothed trace this is the exact gradient of
// the relaxed forward; on a Hard trace it is the surrogate gradient.
template <class Scalar>
void backward_recursive_into(const VoltageTrace<Scalar>& trace, const QNetwork<Scalar>& net,
                             const Vec<Scalar>& seed, const BackwardOptions& opts,
                             GradientSet<Scalar>& gset) {
  const int T = net.sim_steps;
  const int L = static_cast<int>(net.specs.size());
  DSQN_REQUIRE(seed.size() == net.num_actions(), "seed length must match the action count");
  DSQN_REQUIRE(static_cast<int>(trace.v.size()) == L && trace.v[L - 1].cols() == T,
               "trace does not match this network");
  const Scalar scale = static_cast<Scalar>(opts.surrogate_scale);

  // Adjoint of the signal flowing between layers, one column per timestep.
  // For the output layer this is unused (the decoder seeds voltages
  // directly); below it, it is the adjoint of the producing layer's spikes.
  Mat<Scalar> g_signal;

  for (int i = L - 1; i >= 0; --i) {
    const LayerSpec& spec = net.specs[i];
    if (spec.kind == LayerKind::Flatten) continue;

    const Scalar tau = static_cast<Scalar>(spec.cfg.tau);
    const Scalar leak = Scalar(1) - Scalar(1) / tau;
    const Scalar vth = static_cast<Scalar>(spec.cfg.v_threshold);
    const Scalar vr = static_cast<Scalar>(spec.cfg.v_reset);
    const int n_in = net.shapes[i].in.size();

    Mat<Scalar> seeds;
    if (spec.neuron == NeuronKind::Li) {
      seeds = detail::decoder_voltage_seeds(trace, net.decoder, seed);
    }

    Mat<Scalar> g_below = Mat<Scalar>::Zero(n_in, T);
    Vec<Scalar> ahead;  // voltage-chain adjoint at t+1, empty at the top step

    for (int t = T - 1; t >= 0; --t) {
      Vec<Scalar> a;
      if (spec.neuron == NeuronKind::Li) {
        a = seeds.col(t);
        if (ahead.size()) a += leak * ahead;
      } else {
        const auto h_t = trace.h[i].col(t);
        const auto s_t = trace.s[i].col(t);
        Vec<Scalar> sg =
            (h_t.array() - vth)
                .unaryExpr([scale](Scalar m) { return scale * surrogate_grad(m); })
                .matrix();
        a = (g_signal.col(t).array() * sg.array()).matrix();
        if (ahead.size()) {
          // Reset-path factor of the voltage chain; the fired branch feeds
          // back through v_reset - h rather than being cut.
          Vec<Scalar> rho =
              ((Scalar(1) - s_t.array()) + (vr - h_t.array()) * sg.array()).matrix();
          a += (leak * rho.array() * ahead.array()).matrix();
        }
      }
      const Vec<Scalar> gx = a / tau;
      synapse_param_grad(net, i, Vec<Scalar>(trace.inputs[i].col(t)), gx, gset.weights[i]);
      g_below.col(t) = synapse_input_grad(net, i, gx);
      ahead = std::move(a);
    }
    g_signal = std::move(g_below);
  }

  // Flatten layers between the lowest parameterised layer and the input
  // pass the adjoint through unchanged; the observation is presented at
  // every step, so its gradient is the time-sum.
  gset.input += g_signal.rowwise().sum();
}

template <class Scalar>
GradientSet<Scalar> backward_recursive(const VoltageTrace<Scalar>& trace,
                                       const QNetwork<Scalar>& net, const Vec<Scalar>& seed,
                                       const BackwardOptions& opts = {}) {
  GradientSet<Scalar> gset = GradientSet<Scalar>::zeros_like(net);
  backward_recursive_into(trace, net, seed, opts, gset);
  return gset;
}

// ---------------------------------------------------------------------------
// Independent oracle: a generic reverse-mode tape over a re-simulation of
// the same network. Every operation is implemented directly (nested loops,
// no im2col, no shared adjoint helpers) so agreement with
// backward_recursive checks both the calculus and the layouts.

namespace tape_detail {

template <class Scalar>
struct Tape {
  struct Node {
    Vec<Scalar> value;
    Vec<Scalar> grad;
    std::function<void()> pull;
  };
  std::vector<Node> nodes;

  int push(Vec<Scalar> value, std::function<void()> pull = {}) {
    Node n;
    n.grad = Vec<Scalar>::Zero(value.size());
    n.value = std::move(value);
    n.pull = std::move(pull);
    nodes.push_back(std::move(n));
    return static_cast<int>(nodes.size()) - 1;
  }

  Vec<Scalar>& value(int id) { return nodes[id].value; }
  Vec<Scalar>& grad(int id) { return nodes[id].grad; }

  void backward() {
    for (int i = static_cast<int>(nodes.size()) - 1; i >= 0; --i) {
      if (nodes[i].pull) nodes[i].pull();
    }
  }
};

template <class Scalar>
Vec<Scalar> loop_dense(const Mat<Scalar>& w, const Vec<Scalar>& in) {
  Vec<Scalar> out = Vec<Scalar>::Zero(w.rows());
  for (Eigen::Index r = 0; r < w.rows(); ++r) {
    for (Eigen::Index c = 0; c < w.cols(); ++c) out[r] += w(r, c) * in[c];
  }
  return out;
}

template <class Scalar>
Vec<Scalar> loop_conv(const Mat<Scalar>& w, const Vec<Scalar>& in, const TensorShape& is,
                      int kernel, int stride, const TensorShape& os) {
  Vec<Scalar> out = Vec<Scalar>::Zero(os.size());
  for (int oc = 0; oc < os.channels; ++oc) {
    for (int oy = 0; oy < os.height; ++oy) {
      for (int ox = 0; ox < os.width; ++ox) {
        Scalar acc = 0;
        for (int ic = 0; ic < is.channels; ++ic) {
          for (int ky = 0; ky < kernel; ++ky) {
            for (int kx = 0; kx < kernel; ++kx) {
              const int iy = oy * stride + ky;
              const int ix = ox * stride + kx;
              acc += w(oc, (ic * kernel + ky) * kernel + kx) *
                     in[(ic * is.height + iy) * is.width + ix];
            }
          }
        }
        out[(oc * os.height + oy) * os.width + ox] = acc;
      }
    }
  }
  return out;
}

}  // namespace tape_detail

// Re-simulates the network in the trace's spike mode on a Wengert-list tape
// and pulls the decoder seed back through it. Shares no forward or adjoint
// code with backward_recursive.
template <class Scalar>
GradientSet<Scalar> backward_tape(const VoltageTrace<Scalar>& trace, const QNetwork<Scalar>& net,
                                  const Vec<Scalar>& seed, const BackwardOptions& opts = {}) {
  using tape_detail::Tape;
  DSQN_REQUIRE(seed.size() == net.num_actions(), "seed length must match the action count");
  const int T = net.sim_steps;
  const int L = static_cast<int>(net.specs.size());
  const bool smoothed = (trace.mode == SpikeMode::Smoothed);
  const Scalar scale = static_cast<Scalar>(opts.surrogate_scale);

  GradientSet<Scalar> gset = GradientSet<Scalar>::zeros_like(net);
  Tape<Scalar> tape;
  auto* tp = &tape;

  const int obs_id = tape.push(trace.obs);
  std::vector<int> v_prev(L, -1);
  std::vector<int> li_v_ids(T, -1);

  for (int t = 0; t < T; ++t) {
    int cur = obs_id;
    for (int i = 0; i < L; ++i) {
      const LayerSpec& spec = net.specs[i];
      if (spec.kind == LayerKind::Flatten) continue;

      const Scalar tau = static_cast<Scalar>(spec.cfg.tau);
      const Scalar vth = static_cast<Scalar>(spec.cfg.v_threshold);
      const Scalar vr = static_cast<Scalar>(spec.cfg.v_reset);
      const int in_id = cur;

      // Synapse: drive x from the incoming signal.
      Vec<Scalar> x;
      if (spec.kind == LayerKind::Dense) {
        x = tape_detail::loop_dense(net.params[i], tape.value(in_id));
      } else {
        x = tape_detail::loop_conv(net.params[i], tape.value(in_id), net.shapes[i].in,
                                   spec.kernel, spec.stride, net.shapes[i].out);
      }
      const int x_id = tape.push(std::move(x));
      {
        const LayerShape sh = net.shapes[i];
        const int kernel = spec.kernel;
        const int stride = spec.stride;
        const LayerKind kind = spec.kind;
        Mat<Scalar>* gw = &gset.weights[i];
        const Mat<Scalar>* w = &net.params[i];
        tape.nodes[x_id].pull = [tp, in_id, x_id, gw, w, sh, kernel, stride, kind]() {
          const Vec<Scalar>& g = tp->grad(x_id);
          const Vec<Scalar>& in = tp->value(in_id);
          Vec<Scalar>& gin = tp->grad(in_id);
          if (kind == LayerKind::Dense) {
            for (Eigen::Index r = 0; r < w->rows(); ++r) {
              for (Eigen::Index c = 0; c < w->cols(); ++c) {
                (*gw)(r, c) += g[r] * in[c];
                gin[c] += (*w)(r, c) * g[r];
              }
            }
          } else {
            for (int oc = 0; oc < sh.out.channels; ++oc) {
              for (int oy = 0; oy < sh.out.height; ++oy) {
                for (int ox = 0; ox < sh.out.width; ++ox) {
                  const Scalar go = g[(oc * sh.out.height + oy) * sh.out.width + ox];
                  for (int ic = 0; ic < sh.in.channels; ++ic) {
                    for (int ky = 0; ky < kernel; ++ky) {
                      for (int kx = 0; kx < kernel; ++kx) {
                        const int iy = oy * stride + ky;
                        const int ix = ox * stride + kx;
                        const int ii = (ic * sh.in.height + iy) * sh.in.width + ix;
                        (*gw)(oc, (ic * kernel + ky) * kernel + kx) += go * in[ii];
                        gin[ii] += (*w)(oc, (ic * kernel + ky) * kernel + kx) * go;
                      }
                    }
                  }
                }
              }
            }
          }
        };
      }

      // Charge: h = v_prev + (x - (v_prev - vr)) / tau, from rest at t = 0.
      const int vp_id = v_prev[i];
      int h_id;
      if (vp_id < 0) {
        Vec<Scalar> h = (vr + tape.value(x_id).array() / tau).matrix();
        h_id = tape.push(std::move(h));
        tape.nodes[h_id].pull = [tp, h_id, x_id, tau]() {
          tp->grad(x_id) += tp->grad(h_id) / tau;
        };
      } else {
        Vec<Scalar> h;
        {
          const Vec<Scalar>& vp = tape.value(vp_id);
          h = (vp.array() + (tape.value(x_id).array() - (vp.array() - vr)) / tau).matrix();
        }
        h_id = tape.push(std::move(h));
        tape.nodes[h_id].pull = [tp, h_id, x_id, vp_id, tau]() {
          tp->grad(x_id) += tp->grad(h_id) / tau;
          tp->grad(vp_id) += tp->grad(h_id) * (Scalar(1) - Scalar(1) / tau);
        };
      }

      if (spec.neuron == NeuronKind::Li) {
        // Non-spiking: v is h itself.
        v_prev[i] = h_id;
        li_v_ids[t] = h_id;
        cur = h_id;
      } else {
        // Spike output.
        Vec<Scalar> s;
        if (smoothed) {
          s = tape.value(h_id).unaryExpr([vth](Scalar hh) { return surrogate(hh - vth); });
        } else {
          s = (tape.value(h_id).array() >= vth).template cast<Scalar>().matrix();
        }
        const int s_id = tape.push(std::move(s));
        tape.nodes[s_id].pull = [tp, s_id, h_id, vth, scale]() {
          const Vec<Scalar>& hh = tp->value(h_id);
          Vec<Scalar>& gh = tp->grad(h_id);
          const Vec<Scalar>& gs = tp->grad(s_id);
          for (Eigen::Index k = 0; k < hh.size(); ++k) {
            gh[k] += gs[k] * scale * surrogate_grad(hh[k] - vth);
          }
        };

        // Reset: v = h * (1 - s) + vr * s.
        Vec<Scalar> v = (tape.value(h_id).array() * (Scalar(1) - tape.value(s_id).array()) +
                         vr * tape.value(s_id).array())
                            .matrix();
        const int v_id = tape.push(std::move(v));
        tape.nodes[v_id].pull = [tp, v_id, h_id, s_id, vr]() {
          const Vec<Scalar>& hh = tp->value(h_id);
          const Vec<Scalar>& ss = tp->value(s_id);
          const Vec<Scalar>& gv = tp->grad(v_id);
          tp->grad(h_id) += (gv.array() * (Scalar(1) - ss.array())).matrix();
          tp->grad(s_id) += (gv.array() * (vr - hh.array())).matrix();
        };
        v_prev[i] = v_id;
        cur = s_id;
      }
    }
  }

  // Decode from the tape's own history and seed the voltage nodes.
  Mat<Scalar> hist(net.num_actions(), T);
  for (int t = 0; t < T; ++t) hist.col(t) = tape.value(li_v_ids[t]);
  Eigen::VectorXi amax;
  decode(hist, net.decoder, &amax);
  switch (net.decoder) {
    case DecoderKind::LastMem:
      tape.grad(li_v_ids[T - 1]) += seed;
      break;
    case DecoderKind::MeanMem:
      for (int t = 0; t < T; ++t) tape.grad(li_v_ids[t]) += seed / static_cast<Scalar>(T);
      break;
    case DecoderKind::MaxMem:
      for (int o = 0; o < net.num_actions(); ++o) tape.grad(li_v_ids[amax[o]])[o] += seed[o];
      break;
  }

  tape.backward();
  gset.input = tape.grad(obs_id);
  return gset;
}

// ---------------------------------------------------------------------------
// Finite-difference check of backward_recursive on the Smoothed (everywhere
// differentiable) forward. For max decoding the objective freezes each
// unit's argmax timestep at its unperturbed value so the objective stays
// smooth across the probe.

struct FdReport {
  double max_rel_err = std::numeric_limits<double>::infinity();
  double max_abs_err = std::numeric_limits<double>::infinity();
  bool finite = false;
};

namespace detail {

template <class Scalar>
Scalar frozen_objective(const QNetwork<Scalar>& net, const Vec<Scalar>& obs,
                        const Vec<Scalar>& seed, const Eigen::VectorXi& frozen_t) {
  const VoltageTrace<Scalar> tr = forward(net, obs, SpikeMode::Smoothed);
  Scalar phi = 0;
  for (int o = 0; o < net.num_actions(); ++o) {
    Scalar qo;
    switch (net.decoder) {
      case DecoderKind::LastMem:
        qo = tr.li_history(o, net.sim_steps - 1);
        break;
      case DecoderKind::MeanMem:
        qo = tr.li_history.row(o).mean();
        break;
      case DecoderKind::MaxMem:
        qo = tr.li_history(o, frozen_t[o]);
        break;
      default:
        throw ContractViolation("unreachable decoder kind");
    }
    phi += seed[o] * qo;
  }
  return phi;
}

}  // namespace detail

// Central differences at probe size h against the analytic gradient of the
// relaxed forward, over every parameter. Relative error uses
// |a - fd| / max(|a|, |fd|, 1e-8). Non-finite values anywhere leave
// finite = false with infinite errors.
template <class Scalar>
FdReport fd_check_relaxed(QNetwork<Scalar> net, const Vec<Scalar>& obs, const Vec<Scalar>& seed,
                          double h, const BackwardOptions& opts = {}) {
  static_assert(std::is_same_v<Scalar, double>,
                "finite differences are only meaningful in double precision");
  FdReport rep;

  const VoltageTrace<Scalar> base = forward(net, obs, SpikeMode::Smoothed);
  const GradientSet<Scalar> analytic = backward_recursive(base, net, seed, opts);
  if (!analytic.all_finite()) return rep;
  const Eigen::VectorXi frozen_t = base.argmax_t;

  double max_rel = 0, max_abs = 0;
  for (std::size_t i = 0; i < net.params.size(); ++i) {
    Mat<Scalar>& p = net.params[i];
    for (Eigen::Index k = 0; k < p.size(); ++k) {
      const Scalar saved = p.data()[k];
      p.data()[k] = saved + h;
      const Scalar up = detail::frozen_objective(net, obs, seed, frozen_t);
      p.data()[k] = saved - h;
      const Scalar dn = detail::frozen_objective(net, obs, seed, frozen_t);
      p.data()[k] = saved;
      const double fd = (up - dn) / (2 * h);
      const double a = analytic.weights[i].data()[k];
      if (!std::isfinite(fd)) return rep;
      const double abs_err = std::abs(a - fd);
      const double rel_err = abs_err / std::max({std::abs(a), std::abs(fd), 1e-8});
      max_abs = std::max(max_abs, abs_err);
      max_rel = std::max(max_rel, rel_err);
    }
  }
  rep.max_rel_err = max_rel;
  rep.max_abs_err = max_abs;
  rep.finite = true;
  return rep;
}

}  // namespace dsqn
