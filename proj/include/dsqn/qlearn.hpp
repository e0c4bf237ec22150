#pragma once

#include <cmath>
#include <functional>
#include <limits>
#include <memory>
#include <utility>
#include <vector>

#include "dsqn/envs.hpp"
#include "dsqn/grad.hpp"
#include "dsqn/metrics.hpp"

namespace dsqn {

template <class Scalar>
struct Transition {
  Vec<Scalar> s;
  int a = 0;
  Scalar r = 0;
  Vec<Scalar> s_next;
  bool done = false;
};

// Fixed-capacity FIFO ring. Sampling is uniform with replacement over the
// filled portion, one draw per slot.
template <class Scalar>
class ReplayBuffer {
 public:
  explicit ReplayBuffer(std::size_t capacity) : cap_(capacity) {
    DSQN_REQUIRE(capacity > 0, "replay capacity must be positive");
    data_.reserve(std::min<std::size_t>(capacity, 1 << 16));
  }

  void push(Transition<Scalar> t) {
    if (data_.size() < cap_) {
      data_.push_back(std::move(t));
    } else {
      data_[write_] = std::move(t);
    }
    write_ = (write_ + 1) % cap_;
  }

  const Transition<Scalar>& sample(Rng& rng) const {
    DSQN_REQUIRE(!data_.empty(), "sampling from an empty replay buffer");
    return data_[static_cast<std::size_t>(rng.uniform_int(static_cast<int>(data_.size())))];
  }

  std::vector<const Transition<Scalar>*> sample_batch(int n, Rng& rng) const {
    DSQN_REQUIRE(n > 0, "batch size must be positive");
    std::vector<const Transition<Scalar>*> batch(n);
    for (int i = 0; i < n; ++i) batch[i] = &sample(rng);
    return batch;
  }

  std::size_t size() const { return data_.size(); }
  std::size_t capacity() const { return cap_; }

  // Exact-state access for checkpointing.
  const std::vector<Transition<Scalar>>& contents() const { return data_; }
  std::size_t write_index() const { return write_; }
  void restore(std::vector<Transition<Scalar>> data, std::size_t write_index) {
    DSQN_REQUIRE(data.size() <= cap_, "restored replay exceeds capacity");
    DSQN_REQUIRE(write_index < cap_, "restored write index out of range");
    data_ = std::move(data);
    write_ = write_index;
  }

 private:
  std::size_t cap_;
  std::size_t write_ = 0;
  std::vector<Transition<Scalar>> data_;
};

enum class LossKind { Mse, Huber };

struct HyperParams {
  double gamma = 0.99;
  double lr = 0.00025;
  double adam_beta1 = 0.9;
  double adam_beta2 = 0.999;
  double adam_eps = 1e-8;
  LossKind loss = LossKind::Mse;
  int batch_size = 32;
  int replay_capacity = 50000;
  int warmup_steps = 1000;
  int target_sync_every = 1000;  // counted in parameter updates
  double eps_start = 1.0;
  double eps_end = 0.05;
  long eps_anneal_steps = 20000;
  long train_steps = 150000;
  long eval_every = 2500;
  int eval_episodes = 30;
  double eval_epsilon = 0.05;
  int noop_max = 4;
  // Stop once an evaluation mean reaches this; +inf disables.
  double early_stop_eval = std::numeric_limits<double>::infinity();

  bool operator==(const HyperParams&) const = default;
};

inline void validate(const HyperParams& hp) {
  DSQN_REQUIRE(hp.gamma >= 0.0 && hp.gamma <= 1.0, "gamma must lie in [0, 1]");
  DSQN_REQUIRE(hp.lr > 0.0, "learning rate must be positive");
  DSQN_REQUIRE(hp.batch_size > 0, "batch size must be positive");
  DSQN_REQUIRE(hp.replay_capacity > 0, "replay capacity must be positive");
  DSQN_REQUIRE(hp.warmup_steps >= 1 && hp.warmup_steps <= hp.replay_capacity,
               "warmup must fit inside the replay buffer");
  DSQN_REQUIRE(hp.target_sync_every >= 1, "target sync interval must be positive");
  DSQN_REQUIRE(hp.eps_start >= 0.0 && hp.eps_start <= 1.0 && hp.eps_end >= 0.0 &&
                   hp.eps_end <= 1.0,
               "epsilon bounds must lie in [0, 1]");
  DSQN_REQUIRE(hp.eps_anneal_steps >= 0, "anneal length must be non-negative");
  DSQN_REQUIRE(hp.train_steps >= 0, "train_steps must be non-negative");
  DSQN_REQUIRE(hp.eval_episodes > 0, "eval_episodes must be positive");
  DSQN_REQUIRE(hp.eval_epsilon >= 0.0 && hp.eval_epsilon <= 1.0, "eval_epsilon in [0, 1]");
  DSQN_REQUIRE(hp.noop_max >= 0, "noop_max must be non-negative");
}

// Linear anneal from eps_start to eps_end over eps_anneal_steps, indexed by
// the 1-based global step; step 1 sees eps_start exactly.
inline double epsilon_at(const HyperParams& hp, long step) {
  if (hp.eps_anneal_steps <= 0) return hp.eps_end;
  const double progress =
      std::min(1.0, static_cast<double>(step - 1) / static_cast<double>(hp.eps_anneal_steps));
  return hp.eps_start + (hp.eps_end - hp.eps_start) * progress;
}

// One-step bootstrap target: r for terminal transitions, else
// r + gamma * max_a' Q(s', a'; target).
template <class Scalar>
Scalar td_target(const Transition<Scalar>& tr, const QNetwork<Scalar>& target_net, double gamma) {
  if (tr.done) return tr.r;
  const Vec<Scalar> qn = q_values(target_net, tr.s_next);
  return tr.r + static_cast<Scalar>(gamma) * qn.maxCoeff();
}

// Epsilon-greedy with one uniform draw per call and a second draw only on
// the exploring branch; greedy ties resolve to the lowest action index.
template <class Scalar>
int select_action(const QNetwork<Scalar>& net, const Vec<Scalar>& obs, double epsilon, Rng& rng) {
  if (rng.uniform() < epsilon) return rng.uniform_int(net.num_actions());
  return greedy_action(q_values(net, obs));
}

template <class Scalar>
struct LossGrad {
  Scalar loss = 0;
  GradientSet<Scalar> grad;
};

// Mean loss over the batch between Q(s, a) and the (constant) TD target,
// with the gradient seeded only at each taken action: MSE contributes
// -2 * residual / batch, Huber the same clamped to [-2/batch, 2/batch].
template <class Scalar>
LossGrad<Scalar> loss_and_grad(const std::vector<const Transition<Scalar>*>& batch,
                               const QNetwork<Scalar>& online, const QNetwork<Scalar>& target,
                               const HyperParams& hp) {
  DSQN_REQUIRE(!batch.empty(), "empty batch");
  const Scalar inv_b = Scalar(1) / static_cast<Scalar>(batch.size());
  LossGrad<Scalar> out;
  out.grad = GradientSet<Scalar>::zeros_like(online);
  Vec<Scalar> seed = Vec<Scalar>::Zero(online.num_actions());

  for (const Transition<Scalar>* tr : batch) {
    DSQN_REQUIRE(tr->a >= 0 && tr->a < online.num_actions(), "action index out of range");
    const Scalar y = td_target(*tr, target, hp.gamma);
    const VoltageTrace<Scalar> trace = forward(online, tr->s);
    const Scalar resid = y - trace.q[tr->a];
    Scalar dq;  // d(loss_i)/dQ(s, a)
    if (hp.loss == LossKind::Mse) {
      out.loss += resid * resid;
      dq = Scalar(-2) * resid;
    } else {
      const Scalar az = std::abs(resid);
      out.loss += az <= Scalar(1) ? resid * resid : Scalar(2) * az - Scalar(1);
      dq = Scalar(-2) * std::clamp(resid, Scalar(-1), Scalar(1));
    }
    seed[tr->a] = dq * inv_b;
    backward_recursive_into(trace, online, seed, BackwardOptions{}, out.grad);
    seed[tr->a] = 0;
  }
  out.loss *= inv_b;
  return out;
}

template <class Scalar>
struct AdamState {
  std::vector<Mat<Scalar>> m;
  std::vector<Mat<Scalar>> v;
  long t = 0;

  static AdamState zeros_like(const QNetwork<Scalar>& net) {
    AdamState st;
    for (const auto& p : net.params) {
      st.m.push_back(p.size() == 0 ? Mat<Scalar>() : Mat<Scalar>::Zero(p.rows(), p.cols()));
      st.v.push_back(p.size() == 0 ? Mat<Scalar>() : Mat<Scalar>::Zero(p.rows(), p.cols()));
    }
    return st;
  }
};

// Standard bias-corrected Adam, applied layerwise.
template <class Scalar>
void adam_step(QNetwork<Scalar>& net, const GradientSet<Scalar>& g, AdamState<Scalar>& st,
               const HyperParams& hp) {
  DSQN_REQUIRE(st.m.size() == net.params.size(), "optimizer state layout mismatch");
  ++st.t;
  const Scalar b1 = static_cast<Scalar>(hp.adam_beta1);
  const Scalar b2 = static_cast<Scalar>(hp.adam_beta2);
  const Scalar bc1 = Scalar(1) - static_cast<Scalar>(std::pow(hp.adam_beta1, st.t));
  const Scalar bc2 = Scalar(1) - static_cast<Scalar>(std::pow(hp.adam_beta2, st.t));
  const Scalar lr = static_cast<Scalar>(hp.lr);
  const Scalar eps = static_cast<Scalar>(hp.adam_eps);

  for (std::size_t i = 0; i < net.params.size(); ++i) {
    if (net.params[i].size() == 0) continue;
    auto& m = st.m[i];
    auto& v = st.v[i];
    const auto& gi = g.weights[i];
    m = b1 * m + (Scalar(1) - b1) * gi;
    v = (b2 * v.array() + (Scalar(1) - b2) * gi.array().square()).matrix();
    net.params[i].array() -= lr * (m.array() / bc1) / ((v.array() / bc2).sqrt() + eps);
  }
}

struct TrainHooks {
  std::function<void(const MetricsRow&)> on_row;
  // After each evaluation; return false to stop training.
  std::function<bool(long step, double eval_mean)> on_eval;
};

// Owns the full training state so that a checkpoint of its members resumes
// bit-exactly: networks, optimizer, replay ring, all RNG streams, and the
// in-flight episode. Weights are drawn from the fabric's "init" stream at
// construction; tests may overwrite params and call sync_target().
template <class Scalar>
struct Trainer {
  std::unique_ptr<Env> env;
  std::unique_ptr<Env> eval_env;
  HyperParams hp;
  QNetwork<Scalar> online;
  QNetwork<Scalar> target;
  AdamState<Scalar> adam;
  ReplayBuffer<Scalar> replay;
  Rng env_rng, policy_rng, replay_rng, eval_rng;

  long global_step = 0;
  long episode = 0;  // completed episodes
  int updates_since_sync = 0;
  double episode_return = 0;
  double last_loss = 0;
  bool has_loss = false;
  double last_eval = std::numeric_limits<double>::quiet_NaN();
  Vec<Scalar> cur_obs;

  Trainer(std::unique_ptr<Env> train_env, std::unique_ptr<Env> evaluation_env,
          QNetwork<Scalar> net, const HyperParams& params, std::uint64_t seed)
      : env(std::move(train_env)),
        eval_env(std::move(evaluation_env)),
        hp(params),
        online(std::move(net)),
        target(online),
        replay(static_cast<std::size_t>(params.replay_capacity)) {
    validate(hp);
    DSQN_REQUIRE(env != nullptr && eval_env != nullptr, "trainer needs both environments");
    DSQN_REQUIRE(online.input_shape == env->observation_shape(),
                 "network input does not match the environment");
    DSQN_REQUIRE(online.num_actions() == env->action_count(),
                 "network output does not match the action count");
    const RngFabric fabric(seed);
    env_rng = fabric.stream("env");
    policy_rng = fabric.stream("policy");
    replay_rng = fabric.stream("replay");
    eval_rng = fabric.stream("eval");
    Rng init_rng = fabric.stream("init");
    init_params(online, init_rng);
    sync_target();
    adam = AdamState<Scalar>::zeros_like(online);
    begin_episode();
  }

  void sync_target() {
    target.params = online.params;
    updates_since_sync = 0;
  }

  void begin_episode() {
    cur_obs = preprocess<Scalar>(env->reset(env_rng.next_u64()), *env);
    episode_return = 0;
  }

  // One environment interaction (plus at most one parameter update and one
  // evaluation). Returns false when training should stop.
  bool step_once(const TrainHooks& hooks) {
    ++global_step;
    const double eps = epsilon_at(hp, global_step);
    const int a = select_action(online, cur_obs, eps, policy_rng);
    const StepResult sr = env->step(a);
    Vec<Scalar> next_obs = preprocess<Scalar>(sr.obs, *env);
    replay.push(Transition<Scalar>{cur_obs, a, static_cast<Scalar>(sr.reward), next_obs,
                                   sr.done});
    episode_return += sr.reward;

    if (static_cast<int>(replay.size()) >= hp.warmup_steps) {
      const auto batch = replay.sample_batch(hp.batch_size, replay_rng);
      const LossGrad<Scalar> lg = loss_and_grad(batch, online, target, hp);
      adam_step(online, lg.grad, adam, hp);
      last_loss = static_cast<double>(lg.loss);
      has_loss = true;
      if (++updates_since_sync >= hp.target_sync_every) sync_target();
    }

    if (sr.done) {
      ++episode;
      if (hooks.on_row) {
        MetricsRow row;
        row.step = global_step;
        row.episode = episode;
        row.episode_return = episode_return;
        if (has_loss) row.loss = last_loss;
        row.epsilon = eps;
        hooks.on_row(row);
      }
      begin_episode();
    } else {
      cur_obs = std::move(next_obs);
    }

    if (hp.eval_every > 0 && global_step % hp.eval_every == 0) {
      const EvalResult ev =
          evaluate(online, *eval_env, hp.eval_episodes, hp.eval_epsilon, hp.noop_max, eval_rng);
      last_eval = ev.mean;
      if (hooks.on_row) {
        MetricsRow row;
        row.step = global_step;
        row.episode = episode;
        row.eval_mean = ev.mean;
        hooks.on_row(row);
      }
      if (hooks.on_eval && !hooks.on_eval(global_step, ev.mean)) return false;
      if (ev.mean >= hp.early_stop_eval) return false;
    }
    return global_step < hp.train_steps;
  }

  void run(const TrainHooks& hooks = {}) {
    while (global_step < hp.train_steps) {
      if (!step_once(hooks)) break;
    }
  }
};

}  // namespace dsqn
