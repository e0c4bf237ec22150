#include "dsqn/envs.hpp"

#include <algorithm>

namespace dsqn {

namespace {

int as_int(double v) { return static_cast<int>(v); }

}  // namespace

// --------------------------------------------------------------------------
// CatchEnv

CatchEnv::CatchEnv(int height, int width) : height_(height), width_(width) {
  DSQN_REQUIRE(height >= 2 && width >= 1, "catch board too small");
}

Eigen::VectorXd CatchEnv::render() const {
  Eigen::VectorXd obs = Eigen::VectorXd::Zero(static_cast<Eigen::Index>(height_) * width_);
  obs[ball_row_ * width_ + ball_col_] = 1.0;
  obs[(height_ - 1) * width_ + paddle_col_] = 1.0;
  return obs;
}

Eigen::VectorXd CatchEnv::reset(std::uint64_t seed) {
  Rng rng(seed);
  ball_row_ = 0;
  ball_col_ = rng.uniform_int(width_);
  paddle_col_ = (width_ - 1) / 2;
  done_ = false;
  return render();
}

StepResult CatchEnv::step(int action) {
  DSQN_REQUIRE(!done_, "step on a finished episode; call reset first");
  DSQN_REQUIRE(action >= 0 && action < 3, "catch action out of range");
  if (action == 1) paddle_col_ = std::max(0, paddle_col_ - 1);
  if (action == 2) paddle_col_ = std::min(width_ - 1, paddle_col_ + 1);
  ball_row_ += 1;

  StepResult r;
  if (ball_row_ == height_ - 1) {
    done_ = true;
    r.reward = (ball_col_ == paddle_col_) ? 1.0 : -1.0;
  }
  r.done = done_;
  r.obs = render();
  return r;
}

std::vector<double> CatchEnv::snapshot() const {
  return {static_cast<double>(ball_row_), static_cast<double>(ball_col_),
          static_cast<double>(paddle_col_), done_ ? 1.0 : 0.0};
}

void CatchEnv::restore(const std::vector<double>& state) {
  DSQN_REQUIRE(state.size() == 4, "catch snapshot has four fields");
  ball_row_ = as_int(state[0]);
  ball_col_ = as_int(state[1]);
  paddle_col_ = as_int(state[2]);
  done_ = state[3] != 0.0;
}

// --------------------------------------------------------------------------
// GridWorldEnv

GridWorldEnv::GridWorldEnv(int side, int max_steps) : side_(side), max_steps_(max_steps) {
  DSQN_REQUIRE(side >= 2, "grid too small");
  DSQN_REQUIRE(max_steps >= 1, "max_steps must be positive");
}

Eigen::VectorXd GridWorldEnv::render() const {
  Eigen::VectorXd obs = Eigen::VectorXd::Zero(static_cast<Eigen::Index>(side_) * side_);
  obs[row_ * side_ + col_] = 1.0;
  return obs;
}

Eigen::VectorXd GridWorldEnv::reset(std::uint64_t) {
  row_ = 0;
  col_ = 0;
  steps_ = 0;
  done_ = false;
  return render();
}

StepResult GridWorldEnv::step(int action) {
  DSQN_REQUIRE(!done_, "step on a finished episode; call reset first");
  DSQN_REQUIRE(action >= 0 && action < 5, "gridworld action out of range");
  switch (action) {
    case 1: row_ = std::max(0, row_ - 1); break;
    case 2: row_ = std::min(side_ - 1, row_ + 1); break;
    case 3: col_ = std::max(0, col_ - 1); break;
    case 4: col_ = std::min(side_ - 1, col_ + 1); break;
    default: break;
  }
  ++steps_;

  StepResult r;
  const bool at_goal = (row_ == side_ - 1 && col_ == side_ - 1);
  if (at_goal) {
    done_ = true;
    r.reward = 1.0;
  } else {
    r.reward = -0.01;
    if (steps_ >= max_steps_) done_ = true;
  }
  r.done = done_;
  r.obs = render();
  return r;
}

std::vector<double> GridWorldEnv::snapshot() const {
  return {static_cast<double>(row_), static_cast<double>(col_), static_cast<double>(steps_),
          done_ ? 1.0 : 0.0};
}

void GridWorldEnv::restore(const std::vector<double>& state) {
  DSQN_REQUIRE(state.size() == 4, "gridworld snapshot has four fields");
  row_ = as_int(state[0]);
  col_ = as_int(state[1]);
  steps_ = as_int(state[2]);
  done_ = state[3] != 0.0;
}

// --------------------------------------------------------------------------
// StackedEnv

StackedEnv::StackedEnv(std::unique_ptr<Env> inner, int frames)
    : inner_(std::move(inner)), frames_(frames) {
  DSQN_REQUIRE(inner_ != nullptr, "StackedEnv needs an inner environment");
  DSQN_REQUIRE(frames_ >= 1, "frame count must be positive");
}

TensorShape StackedEnv::observation_shape() const {
  TensorShape s = inner_->observation_shape();
  s.channels *= frames_;
  return s;
}

Eigen::VectorXd StackedEnv::stacked() const {
  const Eigen::Index n = inner_->observation_shape().size();
  Eigen::VectorXd out(n * frames_);
  for (int f = 0; f < frames_; ++f) out.segment(f * n, n) = history_[f];
  return out;
}

Eigen::VectorXd StackedEnv::reset(std::uint64_t seed) {
  Eigen::VectorXd first = inner_->reset(seed);
  history_.assign(frames_, first);
  return stacked();
}

StepResult StackedEnv::step(int action) {
  StepResult r = inner_->step(action);
  history_.pop_front();
  history_.push_back(r.obs);
  r.obs = stacked();
  return r;
}

std::vector<double> StackedEnv::snapshot() const {
  std::vector<double> state = inner_->snapshot();
  state.push_back(static_cast<double>(state.size()));  // inner length marker at the end
  for (const auto& frame : history_) {
    for (Eigen::Index i = 0; i < frame.size(); ++i) state.push_back(frame[i]);
  }
  return state;
}

void StackedEnv::restore(const std::vector<double>& state) {
  const Eigen::Index n = inner_->observation_shape().size();
  const std::size_t frame_area = static_cast<std::size_t>(n) * frames_;
  DSQN_REQUIRE(state.size() >= frame_area + 1, "stacked snapshot too short");
  const std::size_t inner_len = state.size() - frame_area - 1;
  DSQN_REQUIRE(state[inner_len] == static_cast<double>(inner_len),
               "stacked snapshot marker mismatch");
  inner_->restore(std::vector<double>(state.begin(), state.begin() + inner_len));
  history_.clear();
  std::size_t off = inner_len + 1;
  for (int f = 0; f < frames_; ++f) {
    Eigen::VectorXd frame(n);
    for (Eigen::Index i = 0; i < n; ++i) frame[i] = state[off++];
    history_.push_back(std::move(frame));
  }
}

// --------------------------------------------------------------------------

std::unique_ptr<Env> make_env(const std::string& name, int frames) {
  DSQN_REQUIRE(frames >= 1, "frame count must be positive");
  std::unique_ptr<Env> env;
  if (name == "catch") {
    env = std::make_unique<CatchEnv>();
  } else if (name == "gridworld") {
    env = std::make_unique<GridWorldEnv>();
  } else {
    throw ContractViolation("unknown environment: " + name);
  }
  if (frames > 1) env = std::make_unique<StackedEnv>(std::move(env), frames);
  return env;
}

std::vector<std::string> env_names() { return {"catch", "gridworld"}; }

}  // namespace dsqn
