#pragma once

#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include <json.hpp>

#include "dsqn/envs.hpp"
#include "dsqn/grad.hpp"

namespace dsqn {

struct AttackConfig {
  double epsilon = 0.01;
  int max_iters = 50;
  int episodes = 30;
  double clip_lo = 0.0;
  double clip_hi = 1.0;

  bool operator==(const AttackConfig&) const = default;
};

inline void validate(const AttackConfig& cfg) {
  DSQN_REQUIRE(cfg.epsilon >= 0.0, "attack epsilon must be non-negative");
  DSQN_REQUIRE(cfg.max_iters >= 1, "attack needs at least one iteration");
  DSQN_REQUIRE(cfg.episodes >= 1, "attack needs at least one episode");
  DSQN_REQUIRE(cfg.clip_hi > cfg.clip_lo, "degenerate clip range");
}

// Raised when an attack cannot be computed (non-finite gradients or Q).
struct AttackFailure : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// One linearisation of the untargeted attack: the loss is the cross-entropy
// between softmax(Q(x)) and the clean greedy action, and the returned
// perturbation is epsilon * sign(dL/dx) with sign(0) = 0.
template <class Scalar>
Vec<Scalar> fgsm_perturb(const QNetwork<Scalar>& net, const Vec<Scalar>& x, double epsilon,
                         int clean_action) {
  DSQN_REQUIRE(epsilon >= 0.0, "attack epsilon must be non-negative");
  const VoltageTrace<Scalar> trace = forward(net, x);
  if (!trace.q.allFinite()) throw AttackFailure("non-finite Q-values under attack");

  // dCE/dQ = softmax(Q) - onehot(clean_action).
  Vec<Scalar> seed = (trace.q.array() - trace.q.maxCoeff()).exp().matrix();
  seed /= seed.sum();
  seed[clean_action] -= Scalar(1);

  const GradientSet<Scalar> g = backward_recursive(trace, net, seed);
  if (!g.input.allFinite()) throw AttackFailure("non-finite input gradient under attack");

  const Scalar e = static_cast<Scalar>(epsilon);
  return g.input.unaryExpr([e](Scalar v) {
    return v > Scalar(0) ? e : (v < Scalar(0) ? -e : Scalar(0));
  });
}

template <class Scalar>
Vec<Scalar> fgsm_perturb(const QNetwork<Scalar>& net, const Vec<Scalar>& x, double epsilon) {
  return fgsm_perturb(net, x, epsilon, greedy_action(q_values(net, x)));
}

template <class Scalar>
struct AttackOutcome {
  Vec<Scalar> x_adv;
  bool flipped = false;
  int iters = 0;
};

// Re-linearises the attack against the current adversarial point, clipping
// into [clip_lo, clip_hi] after every step, until the greedy action moves
// away from the clean one or the iteration budget runs out. A zero epsilon
// cannot change x and returns immediately.
template <class Scalar>
AttackOutcome<Scalar> iterative_attack(const QNetwork<Scalar>& net, const Vec<Scalar>& x,
                                       const AttackConfig& cfg) {
  validate(cfg);
  AttackOutcome<Scalar> out;
  out.x_adv = x;
  if (cfg.epsilon == 0.0) return out;

  const int clean = greedy_action(q_values(net, x));
  const Scalar lo = static_cast<Scalar>(cfg.clip_lo);
  const Scalar hi = static_cast<Scalar>(cfg.clip_hi);
  for (int it = 0; it < cfg.max_iters; ++it) {
    const Vec<Scalar> eta = fgsm_perturb(net, out.x_adv, cfg.epsilon, clean);
    out.x_adv = (out.x_adv + eta).cwiseMax(lo).cwiseMin(hi);
    ++out.iters;
    if (greedy_action(q_values(net, out.x_adv)) != clean) {
      out.flipped = true;
      break;
    }
  }
  return out;
}

struct AttackReport {
  std::string env;
  double epsilon = 0;
  int max_iters = 0;
  int episodes = 0;
  double before = 0;
  double after = 0;
  // Percent decay of the mean return; absent when before is not positive.
  std::optional<double> decay_rate;
  double flip_fraction = 0;
  std::vector<double> per_episode_flip_fraction;
  std::vector<double> returns_before;
  std::vector<double> returns_after;
  double max_linf = 0;  // largest ||x_adv - x||_inf seen across all states
};

inline std::optional<double> decay_rate_percent(double before, double after) {
  if (before <= 0.0) return std::nullopt;
  return (before - after) / before * 100.0;
}

inline std::string to_json_string(const AttackReport& r) {
  nlohmann::ordered_json j;
  j["env"] = r.env;
  j["epsilon"] = r.epsilon;
  j["max_iters"] = r.max_iters;
  j["before"] = r.before;
  j["after"] = r.after;
  if (r.decay_rate.has_value()) {
    j["decay_rate"] = *r.decay_rate;
  } else {
    j["decay_rate"] = nullptr;
  }
  j["flip_fraction"] = r.flip_fraction;
  return j.dump();
}

// Runs the evaluation protocol twice from the same seed: once clean, once
// with every greedy decision taken from the attacked observation. Episode
// seeds, no-op draws, and exploration draws therefore line up pairwise, and
// with epsilon = 0 the attacked run reproduces the clean one bit for bit.
template <class Scalar>
AttackReport attacked_eval(const QNetwork<Scalar>& net, Env& env, const AttackConfig& cfg,
                           double eval_epsilon, int noop_max, std::uint64_t seed) {
  validate(cfg);
  AttackReport report;
  report.env = env.name();
  report.epsilon = cfg.epsilon;
  report.max_iters = cfg.max_iters;
  report.episodes = cfg.episodes;

  Rng rng_before(seed);
  const EvalResult clean = evaluate(net, env, cfg.episodes, eval_epsilon, noop_max, rng_before);
  report.returns_before = clean.returns;
  report.before = clean.mean;

  Rng rng_after(seed);
  long total_greedy = 0;
  long total_flips = 0;
  double max_linf = 0;
  for (int e = 0; e < cfg.episodes; ++e) {
    long ep_greedy = 0;
    long ep_flips = 0;
    const auto attacked_greedy = [&](const QNetwork<Scalar>& n, const Vec<Scalar>& obs) {
      const int clean_a = greedy_action(q_values(n, obs));
      const AttackOutcome<Scalar> adv = iterative_attack(n, obs, cfg);
      max_linf = std::max(max_linf,
                          static_cast<double>((adv.x_adv - obs).template lpNorm<Eigen::Infinity>()));
      const int adv_a = greedy_action(q_values(n, adv.x_adv));
      ++ep_greedy;
      if (adv_a != clean_a) ++ep_flips;
      return adv_a;
    };
    const EvalResult one = evaluate<Scalar>(net, env, 1, eval_epsilon, noop_max, rng_after,
                                            attacked_greedy);
    report.returns_after.push_back(one.returns[0]);
    report.per_episode_flip_fraction.push_back(
        ep_greedy == 0 ? 0.0 : static_cast<double>(ep_flips) / static_cast<double>(ep_greedy));
    total_greedy += ep_greedy;
    total_flips += ep_flips;
  }
  double sum = 0;
  for (double r : report.returns_after) sum += r;
  report.after = sum / static_cast<double>(cfg.episodes);
  report.flip_fraction =
      total_greedy == 0 ? 0.0 : static_cast<double>(total_flips) / static_cast<double>(total_greedy);
  report.decay_rate = decay_rate_percent(report.before, report.after);
  report.max_linf = max_linf;
  return report;
}

}  // namespace dsqn
