#pragma once

#include <string>
#include <vector>

#include "dsqn/check.hpp"
#include "dsqn/neuron.hpp"
#include "dsqn/rng.hpp"
#include "dsqn/surrogate.hpp"
#include "dsqn/types.hpp"

namespace dsqn {

enum class LayerKind { Conv2d, Dense, Flatten };
enum class NeuronKind { None, Lif, Li };
enum class DecoderKind { LastMem, MaxMem, MeanMem };

// Smoothed mode replaces the hard step with the arctangent relaxation in
// both the spike output and the reset gate. It exists so the backward pass
// has a finite-differencable twin; inference and training always run Hard.
enum class SpikeMode { Hard, Smoothed };

inline const char* to_string(DecoderKind k) {
  switch (k) {
    case DecoderKind::LastMem: return "last_mem";
    case DecoderKind::MaxMem: return "max_mem";
    case DecoderKind::MeanMem: return "mean_mem";
  }
  return "?";
}

inline DecoderKind parse_decoder(const std::string& name) {
  if (name == "last_mem") return DecoderKind::LastMem;
  if (name == "max_mem") return DecoderKind::MaxMem;
  if (name == "mean_mem") return DecoderKind::MeanMem;
  throw ContractViolation("unknown decoder: " + name);
}

// One stage of the stack: a synapse (conv/dense/flatten) plus the neuron
// model applied to its drive. Flatten is shape bookkeeping only and carries
// no neuron; every parameterised layer carries one.
struct LayerSpec {
  LayerKind kind = LayerKind::Dense;
  NeuronKind neuron = NeuronKind::None;
  NeuronConfig cfg{};
  int out_channels = 0;  // conv
  int kernel = 0;        // conv
  int stride = 1;        // conv
  int out = 0;           // dense
};

struct LayerShape {
  TensorShape in;
  TensorShape out;
};

template <class Scalar>
struct QNetwork {
  TensorShape input_shape;
  int sim_steps = 8;
  DecoderKind decoder = DecoderKind::MaxMem;
  std::vector<LayerSpec> specs;
  std::vector<LayerShape> shapes;
  // dense: out x in; conv: out_channels x (in_channels * kernel * kernel);
  // flatten: empty. No bias terms anywhere, and one parameter set is reused
  // at every simulation step.
  std::vector<Mat<Scalar>> params;

  int num_actions() const { return shapes.back().out.size(); }

  std::size_t param_count() const {
    std::size_t n = 0;
    for (const auto& p : params) n += static_cast<std::size_t>(p.size());
    return n;
  }
};

inline int conv_extent(int in, int kernel, int stride) { return (in - kernel) / stride + 1; }

// Resolves per-layer geometry and enforces the stack invariants: every
// parameterised layer carries a neuron, only the last one is LI, flatten
// precedes any dense layer fed from a spatial map, and shapes chain.
template <class Scalar>
QNetwork<Scalar> make_network(TensorShape input, std::vector<LayerSpec> specs, int sim_steps,
                              DecoderKind decoder) {
  DSQN_REQUIRE(sim_steps >= 1, "need at least one simulation step");
  DSQN_REQUIRE(!specs.empty(), "network needs at least one layer");
  DSQN_REQUIRE(input.size() > 0, "input shape must be non-empty");

  QNetwork<Scalar> net;
  net.input_shape = input;
  net.sim_steps = sim_steps;
  net.decoder = decoder;

  int last_param = -1;
  for (int i = 0; i < static_cast<int>(specs.size()); ++i) {
    if (specs[i].kind != LayerKind::Flatten) last_param = i;
  }
  DSQN_REQUIRE(last_param >= 0, "network needs a parameterised layer");
  DSQN_REQUIRE(last_param == static_cast<int>(specs.size()) - 1,
               "the output layer must be parameterised");

  TensorShape cur = input;
  for (int i = 0; i < static_cast<int>(specs.size()); ++i) {
    const LayerSpec& spec = specs[i];
    LayerShape shape;
    shape.in = cur;
    switch (spec.kind) {
      case LayerKind::Conv2d: {
        DSQN_REQUIRE(spec.out_channels > 0 && spec.kernel > 0 && spec.stride > 0,
                     "conv geometry must be positive");
        DSQN_REQUIRE(cur.height >= spec.kernel && cur.width >= spec.kernel,
                     "conv kernel larger than its input");
        shape.out = {spec.out_channels, conv_extent(cur.height, spec.kernel, spec.stride),
                     conv_extent(cur.width, spec.kernel, spec.stride)};
        net.params.push_back(Mat<Scalar>::Zero(
            spec.out_channels, cur.channels * spec.kernel * spec.kernel));
        break;
      }
      case LayerKind::Dense: {
        DSQN_REQUIRE(spec.out > 0, "dense width must be positive");
        DSQN_REQUIRE(cur.height == 1 && cur.width == 1,
                     "dense layer fed from a spatial map; insert Flatten first");
        shape.out = {spec.out, 1, 1};
        net.params.push_back(Mat<Scalar>::Zero(spec.out, cur.size()));
        break;
      }
      case LayerKind::Flatten: {
        DSQN_REQUIRE(spec.neuron == NeuronKind::None, "flatten carries no neuron");
        shape.out = {cur.size(), 1, 1};
        net.params.push_back(Mat<Scalar>());
        break;
      }
    }
    if (spec.kind != LayerKind::Flatten) {
      const bool is_output = (i == last_param);
      DSQN_REQUIRE(spec.neuron != NeuronKind::None, "parameterised layer carries no neuron");
      DSQN_REQUIRE(spec.neuron == (is_output ? NeuronKind::Li : NeuronKind::Lif),
                   is_output ? "output layer must be LI" : "hidden layers must be LIF");
      validate(spec.cfg, spec.neuron == NeuronKind::Lif);
    }
    net.shapes.push_back(shape);
    cur = shape.out;
  }
  net.specs = std::move(specs);
  return net;
}

// "16C3S1-LIF-Flatten-128-LIF-NA-LI": dash-separated stages. <o>C<k>S<s> is
// a conv synapse, a bare integer is a dense width, NA is the action count,
// and LIF/LI name the neuron attached to the preceding synapse. A leading
// "Input" token is accepted and ignored.
inline std::vector<LayerSpec> parse_architecture(const std::string& text, int num_actions,
                                                 const NeuronConfig& cfg) {
  DSQN_REQUIRE(num_actions > 0, "action count must be positive");
  std::vector<LayerSpec> specs;
  bool pending_neuron = false;  // last synapse still waiting for LIF/LI

  std::size_t pos = 0;
  while (pos <= text.size()) {
    std::size_t dash = text.find('-', pos);
    if (dash == std::string::npos) dash = text.size();
    const std::string tok = text.substr(pos, dash - pos);
    pos = dash + 1;
    if (tok.empty()) {
      if (pos > text.size()) break;
      throw ContractViolation("empty token in architecture: " + text);
    }

    if (tok == "Input") continue;
    if (tok == "Flatten") {
      DSQN_REQUIRE(!pending_neuron, "synapse before Flatten is missing its neuron");
      LayerSpec s;
      s.kind = LayerKind::Flatten;
      specs.push_back(s);
      continue;
    }
    if (tok == "LIF" || tok == "LI") {
      DSQN_REQUIRE(pending_neuron, "neuron token without a preceding synapse");
      specs.back().neuron = (tok == "LIF") ? NeuronKind::Lif : NeuronKind::Li;
      specs.back().cfg = cfg;
      pending_neuron = false;
      continue;
    }

    // Synapse token: either <o>C<k>S<s> or a dense width.
    DSQN_REQUIRE(!pending_neuron, "two synapses in a row; missing a neuron token");
    LayerSpec s;
    std::size_t c = tok.find('C');
    if (c != std::string::npos) {
      std::size_t st = tok.find('S', c);
      DSQN_REQUIRE(st != std::string::npos, "conv token needs a stride: " + tok);
      try {
        s.kind = LayerKind::Conv2d;
        s.out_channels = std::stoi(tok.substr(0, c));
        s.kernel = std::stoi(tok.substr(c + 1, st - c - 1));
        s.stride = std::stoi(tok.substr(st + 1));
      } catch (const std::exception&) {
        throw ContractViolation("malformed conv token: " + tok);
      }
    } else {
      s.kind = LayerKind::Dense;
      if (tok == "NA") {
        s.out = num_actions;
      } else {
        try {
          std::size_t used = 0;
          s.out = std::stoi(tok, &used);
          DSQN_REQUIRE(used == tok.size(), "trailing junk in token: " + tok);
        } catch (const ContractViolation&) {
          throw;
        } catch (const std::exception&) {
          throw ContractViolation("unrecognised architecture token: " + tok);
        }
      }
    }
    specs.push_back(s);
    pending_neuron = true;
  }
  DSQN_REQUIRE(!pending_neuron, "trailing synapse is missing its neuron token");
  DSQN_REQUIRE(!specs.empty(), "architecture has no layers: " + text);
  return specs;
}

// Uniform(-1/sqrt(fan_in), 1/sqrt(fan_in)) per layer, drawn in a fixed
// order (layer-major, column-major within a layer).
template <class Scalar>
void init_params(QNetwork<Scalar>& net, Rng& rng) {
  for (auto& p : net.params) {
    if (p.size() == 0) continue;
    const double bound = 1.0 / std::sqrt(static_cast<double>(p.cols()));
    Scalar* data = p.data();
    for (Eigen::Index k = 0; k < p.size(); ++k) {
      data[k] = static_cast<Scalar>(rng.uniform(-bound, bound));
    }
  }
}

// Gathers every kernel-sized patch into a column so convolution becomes one
// matrix product. Rows scan (in_channel, ky, kx); columns scan output
// positions row-major.
template <class Scalar>
Mat<Scalar> im2col(const Vec<Scalar>& input, const TensorShape& in, int kernel, int stride,
                   const TensorShape& out) {
  Mat<Scalar> patches(in.channels * kernel * kernel, out.height * out.width);
  for (int oy = 0; oy < out.height; ++oy) {
    for (int ox = 0; ox < out.width; ++ox) {
      const int col = oy * out.width + ox;
      int row = 0;
      for (int c = 0; c < in.channels; ++c) {
        for (int ky = 0; ky < kernel; ++ky) {
          const int iy = oy * stride + ky;
          const int base = (c * in.height + iy) * in.width + ox * stride;
          for (int kx = 0; kx < kernel; ++kx) {
            patches(row++, col) = input[base + kx];
          }
        }
      }
    }
  }
  return patches;
}

// Adjoint of im2col: scatter-add patch columns back onto the input plane.
template <class Scalar>
Vec<Scalar> col2im(const Mat<Scalar>& patches, const TensorShape& in, int kernel, int stride,
                   const TensorShape& out) {
  Vec<Scalar> grad = Vec<Scalar>::Zero(in.size());
  for (int oy = 0; oy < out.height; ++oy) {
    for (int ox = 0; ox < out.width; ++ox) {
      const int col = oy * out.width + ox;
      int row = 0;
      for (int c = 0; c < in.channels; ++c) {
        for (int ky = 0; ky < kernel; ++ky) {
          const int iy = oy * stride + ky;
          const int base = (c * in.height + iy) * in.width + ox * stride;
          for (int kx = 0; kx < kernel; ++kx) {
            grad[base + kx] += patches(row++, col);
          }
        }
      }
    }
  }
  return grad;
}

// Applies layer i's synapse to a flat input vector.
template <class Scalar>
Vec<Scalar> synapse_apply(const QNetwork<Scalar>& net, int i, const Vec<Scalar>& input) {
  const LayerSpec& spec = net.specs[i];
  const LayerShape& shape = net.shapes[i];
  DSQN_REQUIRE(input.size() == shape.in.size(), "layer input has the wrong length");
  switch (spec.kind) {
    case LayerKind::Flatten:
      return input;
    case LayerKind::Dense:
      return net.params[i] * input;
    case LayerKind::Conv2d: {
      const Mat<Scalar> patches = im2col(input, shape.in, spec.kernel, spec.stride, shape.out);
      const Mat<Scalar> maps = net.params[i] * patches;  // out_channels x positions
      Vec<Scalar> flat(shape.out.size());
      const int positions = shape.out.height * shape.out.width;
      for (int c = 0; c < shape.out.channels; ++c) {
        flat.segment(c * positions, positions) = maps.row(c).transpose();
      }
      return flat;
    }
  }
  throw ContractViolation("unreachable layer kind");
}

// Gradient of the synapse output w.r.t. its input, pulled back through g.
template <class Scalar>
Vec<Scalar> synapse_input_grad(const QNetwork<Scalar>& net, int i, const Vec<Scalar>& g) {
  const LayerSpec& spec = net.specs[i];
  const LayerShape& shape = net.shapes[i];
  DSQN_REQUIRE(g.size() == shape.out.size(), "adjoint has the wrong length");
  switch (spec.kind) {
    case LayerKind::Flatten:
      return g;
    case LayerKind::Dense:
      return net.params[i].transpose() * g;
    case LayerKind::Conv2d: {
      const int positions = shape.out.height * shape.out.width;
      Mat<Scalar> gmaps(shape.out.channels, positions);
      for (int c = 0; c < shape.out.channels; ++c) {
        gmaps.row(c) = g.segment(c * positions, positions).transpose();
      }
      const Mat<Scalar> gpatches = net.params[i].transpose() * gmaps;
      return col2im(gpatches, shape.in, spec.kernel, spec.stride, shape.out);
    }
  }
  throw ContractViolation("unreachable layer kind");
}

// Gradient of the synapse output w.r.t. its parameters, accumulated into
// acc (same shape as params[i]).
template <class Scalar>
void synapse_param_grad(const QNetwork<Scalar>& net, int i, const Vec<Scalar>& input,
                        const Vec<Scalar>& g, Mat<Scalar>& acc) {
  const LayerSpec& spec = net.specs[i];
  const LayerShape& shape = net.shapes[i];
  switch (spec.kind) {
    case LayerKind::Flatten:
      return;
    case LayerKind::Dense:
      acc.noalias() += g * input.transpose();
      return;
    case LayerKind::Conv2d: {
      const int positions = shape.out.height * shape.out.width;
      Mat<Scalar> gmaps(shape.out.channels, positions);
      for (int c = 0; c < shape.out.channels; ++c) {
        gmaps.row(c) = g.segment(c * positions, positions).transpose();
      }
      const Mat<Scalar> patches = im2col(input, shape.in, spec.kernel, spec.stride, shape.out);
      acc.noalias() += gmaps * patches.transpose();
      return;
    }
  }
}

// Everything the backward pass reads from one simulation: per layer and per
// timestep, the synapse input I_t, the drive X_t, and the membrane triple
// (h, v, s). Columns index timesteps. Flatten layers store nothing.
template <class Scalar>
struct VoltageTrace {
  SpikeMode mode = SpikeMode::Hard;
  Vec<Scalar> obs;
  std::vector<Mat<Scalar>> inputs;
  std::vector<Mat<Scalar>> drive;
  std::vector<Mat<Scalar>> h;
  std::vector<Mat<Scalar>> v;
  std::vector<Mat<Scalar>> s;
  Mat<Scalar> li_history;        // output-layer voltage, num_actions x T
  Eigen::VectorXi argmax_t;      // per output unit, first timestep attaining the max
  Vec<Scalar> q;
};

// Decodes a voltage history (n x T) into one scalar per unit. Ties in the
// max resolve to the earliest timestep; argmax_t (0-based) is recorded when
// requested.
template <class Scalar>
Vec<Scalar> decode(const Mat<Scalar>& history, DecoderKind kind,
                   Eigen::VectorXi* argmax_t = nullptr) {
  DSQN_REQUIRE(history.cols() >= 1, "voltage history is empty");
  const Eigen::Index n = history.rows();
  const Eigen::Index T = history.cols();
  if (argmax_t) argmax_t->setZero(n);
  switch (kind) {
    case DecoderKind::LastMem:
      if (argmax_t) argmax_t->setConstant(n, static_cast<int>(T - 1));
      return history.col(T - 1);
    case DecoderKind::MeanMem:
      return history.rowwise().mean();
    case DecoderKind::MaxMem: {
      Vec<Scalar> q(n);
      for (Eigen::Index i = 0; i < n; ++i) {
        Scalar best = history(i, 0);
        int best_t = 0;
        for (Eigen::Index t = 1; t < T; ++t) {
          if (history(i, t) > best) {
            best = history(i, t);
            best_t = static_cast<int>(t);
          }
        }
        q[i] = best;
        if (argmax_t) (*argmax_t)[i] = best_t;
      }
      return q;
    }
  }
  throw ContractViolation("unreachable decoder kind");
}

// Unrolls the stack over sim_steps with the observation presented as a
// constant input at every step, starting from rest. LIF layers emit spikes
// downstream; the final LI layer's voltage history is decoded into Q.
template <class Scalar>
VoltageTrace<Scalar> forward(const QNetwork<Scalar>& net, const Vec<Scalar>& obs,
                             SpikeMode mode = SpikeMode::Hard) {
  DSQN_REQUIRE(obs.size() == net.input_shape.size(), "observation length mismatch");
  DSQN_REQUIRE(obs.allFinite(), "observation contains non-finite values");
  const int T = net.sim_steps;
  const int L = static_cast<int>(net.specs.size());

  VoltageTrace<Scalar> trace;
  trace.mode = mode;
  trace.obs = obs;
  trace.inputs.resize(L);
  trace.drive.resize(L);
  trace.h.resize(L);
  trace.v.resize(L);
  trace.s.resize(L);

  std::vector<NeuronState<Scalar>> states(L);
  for (int i = 0; i < L; ++i) {
    if (net.specs[i].kind == LayerKind::Flatten) continue;
    const int n_out = net.shapes[i].out.size();
    const int n_in = net.shapes[i].in.size();
    trace.inputs[i].resize(n_in, T);
    trace.drive[i].resize(n_out, T);
    trace.h[i].resize(n_out, T);
    trace.v[i].resize(n_out, T);
    trace.s[i].resize(n_out, T);
    states[i] = rest_state<Scalar>(n_out, net.specs[i].cfg);
  }

  for (int t = 0; t < T; ++t) {
    Vec<Scalar> cur = obs;
    for (int i = 0; i < L; ++i) {
      const LayerSpec& spec = net.specs[i];
      if (spec.kind == LayerKind::Flatten) continue;
      trace.inputs[i].col(t) = cur;
      Vec<Scalar> x = synapse_apply(net, i, cur);
      trace.drive[i].col(t) = x;
      NeuronState<Scalar>& st = states[i];
      if (spec.neuron == NeuronKind::Li) {
        st = li_step(st, x, spec.cfg);
      } else if (mode == SpikeMode::Hard) {
        st = lif_step(st, x, spec.cfg);
      } else {
        const Scalar tau = static_cast<Scalar>(spec.cfg.tau);
        const Scalar vth = static_cast<Scalar>(spec.cfg.v_threshold);
        const Scalar vr = static_cast<Scalar>(spec.cfg.v_reset);
        NeuronState<Scalar> next;
        next.h = (st.v.array() + (x.array() - (st.v.array() - vr)) / tau).matrix();
        next.s = next.h.unaryExpr([vth](Scalar hh) { return surrogate(hh - vth); });
        next.v = (next.h.array() * (Scalar(1) - next.s.array()) + vr * next.s.array()).matrix();
        st = next;
      }
      trace.h[i].col(t) = st.h;
      trace.v[i].col(t) = st.v;
      trace.s[i].col(t) = st.s;
      cur = (spec.neuron == NeuronKind::Li) ? st.v : st.s;
    }
  }

  trace.li_history = trace.v[L - 1];
  trace.q = decode(trace.li_history, net.decoder, &trace.argmax_t);
  return trace;
}

// Q-values only; convenience over forward().
template <class Scalar>
Vec<Scalar> q_values(const QNetwork<Scalar>& net, const Vec<Scalar>& obs) {
  return forward(net, obs).q;
}

// Greedy action with ties resolved to the lowest index.
template <class Scalar>
int greedy_action(const Vec<Scalar>& q) {
  DSQN_REQUIRE(q.size() > 0, "empty Q-vector");
  int best = 0;
  for (Eigen::Index i = 1; i < q.size(); ++i) {
    if (q[i] > q[best]) best = static_cast<int>(i);
  }
  return best;
}

}  // namespace dsqn
