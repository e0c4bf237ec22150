#pragma once

#include <deque>
#include <functional>
#include <memory>
#include <string>
#include <utility>
#include <vector>

#include "dsqn/network.hpp"
#include "dsqn/rng.hpp"
#include "dsqn/types.hpp"

namespace dsqn {

struct StepResult {
  Eigen::VectorXd obs;
  double reward = 0;
  bool done = false;
};

// Deterministic episodic environment: reset(seed) fixes all of the
// episode's randomness. Stepping after the terminal transition, or before
// the first reset, is a contract violation.
class Env {
 public:
  virtual ~Env() = default;
  virtual const std::string& name() const = 0;
  virtual TensorShape observation_shape() const = 0;
  virtual int action_count() const = 0;
  virtual Eigen::VectorXd reset(std::uint64_t seed) = 0;
  virtual StepResult step(int action) = 0;
  // Inclusive bounds every raw observation value lies in.
  virtual std::pair<double, double> observation_range() const = 0;
  // Complete internal state, for exact mid-episode save and restore.
  virtual std::vector<double> snapshot() const = 0;
  virtual void restore(const std::vector<double>& state) = 0;
};

// A ball falls one row per step from a uniformly random top column; the
// paddle sits on the bottom row, starts centred, and may stay or move one
// cell (actions: 0 stay, 1 left, 2 right). The episode lasts exactly
// height-1 steps and pays +1 if the paddle is under the ball on the last
// row, -1 otherwise. Observation: binary {1, height, width} image marking
// ball and paddle.
class CatchEnv final : public Env {
 public:
  explicit CatchEnv(int height = 10, int width = 10);

  const std::string& name() const override { return name_; }
  TensorShape observation_shape() const override { return {1, height_, width_}; }
  int action_count() const override { return 3; }
  Eigen::VectorXd reset(std::uint64_t seed) override;
  StepResult step(int action) override;
  std::pair<double, double> observation_range() const override { return {0.0, 1.0}; }
  std::vector<double> snapshot() const override;
  void restore(const std::vector<double>& state) override;

  int height() const { return height_; }
  int width() const { return width_; }

 private:
  Eigen::VectorXd render() const;

  std::string name_ = "catch";
  int height_;
  int width_;
  int ball_row_ = 0;
  int ball_col_ = 0;
  int paddle_col_ = 0;
  bool done_ = true;
};

// Empty square grid; the agent starts in the top-left corner and seeks the
// opposite corner. Actions: 0 stay, 1 up, 2 down, 3 left, 4 right; moves
// off the grid keep the agent in place. Reward is +1 on the step that
// reaches the goal and -0.01 on every other step; the episode also ends
// after max_steps. Observation: one-hot position {1, side, side}.
class GridWorldEnv final : public Env {
 public:
  explicit GridWorldEnv(int side = 5, int max_steps = 50);

  const std::string& name() const override { return name_; }
  TensorShape observation_shape() const override { return {1, side_, side_}; }
  int action_count() const override { return 5; }
  Eigen::VectorXd reset(std::uint64_t seed) override;
  StepResult step(int action) override;
  std::pair<double, double> observation_range() const override { return {0.0, 1.0}; }
  std::vector<double> snapshot() const override;
  void restore(const std::vector<double>& state) override;

  int side() const { return side_; }

 private:
  Eigen::VectorXd render() const;

  std::string name_ = "gridworld";
  int side_;
  int max_steps_;
  int row_ = 0;
  int col_ = 0;
  int steps_ = 0;
  bool done_ = true;
};

// Decorator that presents the last `frames` observations stacked along the
// channel axis; a reset replicates the first frame. Lets frame history feed
// the network without the environments or the trainer knowing about it.
class StackedEnv final : public Env {
 public:
  StackedEnv(std::unique_ptr<Env> inner, int frames);

  const std::string& name() const override { return inner_->name(); }
  TensorShape observation_shape() const override;
  int action_count() const override { return inner_->action_count(); }
  Eigen::VectorXd reset(std::uint64_t seed) override;
  StepResult step(int action) override;
  std::pair<double, double> observation_range() const override {
    return inner_->observation_range();
  }
  std::vector<double> snapshot() const override;
  void restore(const std::vector<double>& state) override;

 private:
  Eigen::VectorXd stacked() const;

  std::unique_ptr<Env> inner_;
  int frames_;
  std::deque<Eigen::VectorXd> history_;
};

// Registered names: "catch", "gridworld". Unknown names are a contract
// violation; frames > 1 wraps the environment in a StackedEnv.
std::unique_ptr<Env> make_env(const std::string& name, int frames = 1);
std::vector<std::string> env_names();

// Scales raw observations into [0, 1] using the environment's declared
// range, in the scalar type the network runs in.
template <class Scalar>
Vec<Scalar> preprocess(const Eigen::VectorXd& raw, const Env& env) {
  DSQN_REQUIRE(raw.size() == env.observation_shape().size(),
               "observation does not match the environment's shape");
  const auto [lo, hi] = env.observation_range();
  DSQN_REQUIRE(hi > lo, "degenerate observation range");
  return ((raw.array() - lo) / (hi - lo)).cast<Scalar>().matrix();
}

struct EvalResult {
  double mean = 0;
  std::vector<double> returns;
};

// Evaluation protocol: per episode, a fresh env seed, then k no-op actions
// (action 0) with k drawn uniformly from [0, noop_max], then epsilon-greedy
// control. greedy_override, when set, supplies the greedy action; it must
// not consume from rng.
template <class Scalar>
EvalResult evaluate(
    const QNetwork<Scalar>& net, Env& env, int episodes, double epsilon, int noop_max, Rng& rng,
    const std::function<int(const QNetwork<Scalar>&, const Vec<Scalar>&)>& greedy_override = {}) {
  DSQN_REQUIRE(episodes > 0, "need at least one evaluation episode");
  DSQN_REQUIRE(noop_max >= 0, "noop_max must be non-negative");
  DSQN_REQUIRE(net.input_shape == env.observation_shape(),
               "network input does not match the environment");
  EvalResult result;
  result.returns.reserve(episodes);
  const int n_actions = env.action_count();

  for (int e = 0; e < episodes; ++e) {
    const std::uint64_t ep_seed = rng.next_u64();
    const int k = rng.uniform_int(noop_max + 1);
    Vec<Scalar> obs = preprocess<Scalar>(env.reset(ep_seed), env);
    double ep_return = 0;
    int t = 0;
    bool done = false;
    while (!done) {
      int a;
      if (t < k) {
        a = 0;
      } else if (rng.uniform() < epsilon) {
        a = rng.uniform_int(n_actions);
      } else {
        a = greedy_override ? greedy_override(net, obs)
                            : greedy_action(q_values(net, obs));
      }
      StepResult sr = env.step(a);
      ep_return += sr.reward;
      done = sr.done;
      if (!done) obs = preprocess<Scalar>(sr.obs, env);
      ++t;
    }
    result.returns.push_back(ep_return);
  }
  double sum = 0;
  for (double r : result.returns) sum += r;
  result.mean = sum / static_cast<double>(episodes);
  return result;
}

}  // namespace dsqn
