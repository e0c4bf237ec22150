#include <cstdio>
#include <exception>
#include <filesystem>
#include <fstream>
#include <optional>
#include <string>

#include <CLI11.hpp>
#include <json.hpp>

#include "dsqn/attack.hpp"
#include "dsqn/case_study.hpp"
#include "dsqn/config.hpp"
#include "dsqn/gradcheck.hpp"
#include "dsqn/log.hpp"
#include "dsqn/metrics.hpp"
#include "dsqn/runtime.hpp"

namespace {

constexpr int kExitOk = 0;
constexpr int kExitCheckFailed = 1;
constexpr int kExitUsage = 2;

struct TrainArgs {
  std::string config_path;
  std::string resume_path;
  std::string out_override;
  std::optional<long> steps_override;
  std::optional<std::uint64_t> seed_override;
  long checkpoint_every = 0;
};

int cmd_train(const TrainArgs& args) {
  dsqn::RunConfig cfg;
  std::unique_ptr<dsqn::TrainerF> trainer;

  if (!args.resume_path.empty()) {
    const dsqn::CheckpointData data = dsqn::load_checkpoint(args.resume_path);
    cfg = dsqn::config_from_checkpoint(data);
    if (!args.config_path.empty()) cfg = dsqn::load_config(args.config_path);
    if (args.steps_override) cfg.train.train_steps = *args.steps_override;
    if (!args.out_override.empty()) cfg.out_dir = args.out_override;
    dsqn::validate(cfg);
    trainer = dsqn::trainer_from_checkpoint(data, &cfg);
    dsqn::log_info("resumed from " + args.resume_path + " at step " +
                   std::to_string(trainer->global_step));
  } else {
    cfg = dsqn::load_config(args.config_path);
    if (args.steps_override) cfg.train.train_steps = *args.steps_override;
    if (args.seed_override) cfg.seed = *args.seed_override;
    if (!args.out_override.empty()) cfg.out_dir = args.out_override;
    dsqn::validate(cfg);
    trainer = dsqn::make_trainer(cfg);
  }

  std::filesystem::create_directories(cfg.out_dir);
  dsqn::save_config((std::filesystem::path(cfg.out_dir) / "config.toml").string(), cfg);
  dsqn::MetricsSink sink(cfg.out_dir);
  const std::string ckpt_path = (std::filesystem::path(cfg.out_dir) / "checkpoint.ckpt").string();
  const std::string final_path =
      (std::filesystem::path(cfg.out_dir) / "checkpoint_final.ckpt").string();

  long last_saved = trainer->global_step;
  dsqn::TrainHooks hooks;
  hooks.on_row = [&](const dsqn::MetricsRow& row) {
    sink.write(row);
    if (row.eval_mean.has_value()) {
      dsqn::log_info("step " + std::to_string(row.step) + " eval_mean " +
                     dsqn::format_double(*row.eval_mean));
    } else if (row.episode_return.has_value()) {
      dsqn::log_debug("step " + std::to_string(row.step) + " episode " +
                      std::to_string(row.episode) + " return " +
                      dsqn::format_double(*row.episode_return));
    }
    if (args.checkpoint_every > 0 && row.step - last_saved >= args.checkpoint_every) {
      dsqn::save_checkpoint(ckpt_path, dsqn::trainer_checkpoint(*trainer, cfg));
      last_saved = row.step;
    }
  };
  trainer->run(hooks);

  dsqn::save_checkpoint(final_path, dsqn::trainer_checkpoint(*trainer, cfg));
  sink.flush();

  nlohmann::ordered_json out;
  out["steps"] = trainer->global_step;
  out["episodes"] = trainer->episode;
  if (std::isfinite(trainer->last_eval)) {
    out["final_eval"] = trainer->last_eval;
  } else {
    out["final_eval"] = nullptr;
  }
  out["out_dir"] = cfg.out_dir;
  out["checkpoint"] = final_path;
  std::printf("%s\n", out.dump().c_str());
  return kExitOk;
}

struct EvalArgs {
  std::string checkpoint_path;
  std::optional<int> episodes;
  std::optional<double> epsilon;
  std::optional<int> noop_max;
  std::optional<std::uint64_t> seed;
};

int cmd_eval(const EvalArgs& args) {
  const dsqn::CheckpointData data = dsqn::load_checkpoint(args.checkpoint_path);
  const dsqn::LoadedNetwork loaded = dsqn::network_from_checkpoint(data);
  const int episodes = args.episodes.value_or(loaded.cfg.train.eval_episodes);
  const double epsilon = args.epsilon.value_or(loaded.cfg.train.eval_epsilon);
  const int noop_max = args.noop_max.value_or(loaded.cfg.train.noop_max);
  const std::uint64_t seed = args.seed.value_or(loaded.cfg.seed);
  DSQN_REQUIRE(episodes > 0, "episodes must be positive");
  DSQN_REQUIRE(noop_max >= 0, "noop-max must be non-negative");

  auto env = dsqn::make_env(loaded.cfg.env, loaded.cfg.frame_stack);
  dsqn::Rng rng(seed);
  const dsqn::EvalResult result =
      dsqn::evaluate(loaded.net, *env, episodes, epsilon, noop_max, rng);

  nlohmann::ordered_json out;
  out["env"] = loaded.cfg.env;
  out["episodes"] = episodes;
  out["epsilon"] = epsilon;
  out["noop_max"] = noop_max;
  out["seed"] = seed;
  out["mean"] = result.mean;
  out["returns"] = result.returns;
  std::printf("%s\n", out.dump().c_str());
  return kExitOk;
}

struct AttackArgs {
  std::string checkpoint_path;
  std::string out_path;
  std::optional<double> epsilon;
  std::optional<int> max_iters;
  std::optional<int> episodes;
  std::optional<std::uint64_t> seed;
};

int cmd_attack(const AttackArgs& args) {
  const dsqn::CheckpointData data = dsqn::load_checkpoint(args.checkpoint_path);
  const dsqn::LoadedNetwork loaded = dsqn::network_from_checkpoint(data);
  dsqn::AttackConfig cfg = loaded.cfg.attack;
  if (args.epsilon) cfg.epsilon = *args.epsilon;
  if (args.max_iters) cfg.max_iters = *args.max_iters;
  if (args.episodes) cfg.episodes = *args.episodes;
  const std::uint64_t seed = args.seed.value_or(loaded.cfg.seed);
  dsqn::validate(cfg);

  auto env = dsqn::make_env(loaded.cfg.env, loaded.cfg.frame_stack);
  const dsqn::AttackReport report =
      dsqn::attacked_eval(loaded.net, *env, cfg, loaded.cfg.train.eval_epsilon,
                          loaded.cfg.train.noop_max, seed);
  const std::string text = dsqn::to_json_string(report);
  if (!args.out_path.empty()) {
    std::ofstream out(args.out_path, std::ios::binary | std::ios::trunc);
    if (!out) throw dsqn::ContractViolation("cannot write report: " + args.out_path);
    out << text << "\n";
  }
  std::printf("%s\n", text.c_str());
  return kExitOk;
}

struct CaseStudyArgs {
  int sim_steps = 8;
  double tau = 2.0;
  double v_threshold = 1.0;
  double v_reset = 0.0;
  double i_min = 0.0;
  double i_max = 3.0;
  int points = 301;
  std::string out_path;
};

int cmd_case_study(const CaseStudyArgs& args) {
  dsqn::NeuronConfig cfg;
  cfg.tau = args.tau;
  cfg.v_threshold = args.v_threshold;
  cfg.v_reset = args.v_reset;
  const auto rows =
      dsqn::case_study_sweep(args.sim_steps, cfg, args.i_min, args.i_max, args.points);

  std::string text = "input_current,last_mem,max_mem,mean_mem\n";
  for (const auto& row : rows) {
    text += dsqn::format_double(row.input_current) + "," + dsqn::format_double(row.last_mem) +
            "," + dsqn::format_double(row.max_mem) + "," + dsqn::format_double(row.mean_mem) +
            "\n";
  }
  if (!args.out_path.empty()) {
    std::ofstream out(args.out_path, std::ios::binary | std::ios::trunc);
    if (!out) throw dsqn::ContractViolation("cannot write sweep: " + args.out_path);
    out << text;
  }
  std::fputs(text.c_str(), stdout);
  return kExitOk;
}

struct GradCheckArgs {
  int trials = 100;
  std::uint64_t seed = 7;
  double abs_tol = 1e-10;
  bool with_fd = false;
  double fd_step = 1e-4;
  double fd_tol = 1e-4;
  double surrogate_scale = 1.0;
};

int cmd_grad_check(const GradCheckArgs& args) {
  dsqn::BackwardOptions opts;
  opts.surrogate_scale = args.surrogate_scale;
  const dsqn::GradCheckSummary summary = dsqn::run_gradcheck(
      args.trials, args.seed, args.abs_tol, args.with_fd, args.fd_step, args.fd_tol, opts);

  nlohmann::ordered_json out;
  out["trials"] = summary.trials;
  out["failures"] = summary.failures;
  out["max_abs_diff"] = summary.max_abs_diff;
  if (summary.fd_checked) {
    out["max_fd_rel_err"] = summary.max_fd_rel_err;
  } else {
    out["max_fd_rel_err"] = nullptr;
  }
  out["passed"] = summary.passed();
  std::printf("%s\n", out.dump().c_str());
  return summary.passed() ? kExitOk : kExitCheckFailed;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Spiking deep Q-network trainer"};
  app.require_subcommand(1);

  TrainArgs train_args;
  CLI::App* train = app.add_subcommand("train", "Train an agent from a config file");
  train->add_option("--config", train_args.config_path, "Run configuration (TOML subset)");
  train->add_option("--resume", train_args.resume_path, "Checkpoint to resume from");
  train->add_option("--steps", train_args.steps_override, "Override train_steps");
  train->add_option("--seed", train_args.seed_override, "Override the run seed");
  train->add_option("--out", train_args.out_override, "Override the output directory");
  train->add_option("--checkpoint-every", train_args.checkpoint_every,
                    "Also checkpoint every N steps (0 = only at the end)");

  EvalArgs eval_args;
  CLI::App* evalc = app.add_subcommand("eval", "Evaluate a checkpointed agent");
  evalc->add_option("--checkpoint", eval_args.checkpoint_path, "Checkpoint to load")
      ->required();
  evalc->add_option("--episodes", eval_args.episodes, "Number of evaluation episodes");
  evalc->add_option("--epsilon", eval_args.epsilon, "Exploration rate during evaluation");
  evalc->add_option("--noop-max", eval_args.noop_max, "Max random no-op starts");
  evalc->add_option("--seed", eval_args.seed, "Evaluation RNG seed");

  AttackArgs attack_args;
  CLI::App* attack = app.add_subcommand("attack", "Evaluate under adversarial perturbations");
  attack->add_option("--checkpoint", attack_args.checkpoint_path, "Checkpoint to load")
      ->required();
  attack->add_option("--epsilon", attack_args.epsilon, "Perturbation budget per step");
  attack->add_option("--max-iters", attack_args.max_iters, "Re-linearisation budget");
  attack->add_option("--episodes", attack_args.episodes, "Number of attacked episodes");
  attack->add_option("--seed", attack_args.seed, "Evaluation RNG seed");
  attack->add_option("--out", attack_args.out_path, "Also write the JSON report here");

  CaseStudyArgs case_args;
  CLI::App* case_study = app.add_subcommand(
      "case-study", "Sweep a two-unit chain over constant input currents");
  case_study->add_option("--sim-steps", case_args.sim_steps, "Simulation steps");
  case_study->add_option("--tau", case_args.tau, "Membrane time constant");
  case_study->add_option("--v-threshold", case_args.v_threshold, "Firing threshold");
  case_study->add_option("--v-reset", case_args.v_reset, "Reset potential");
  case_study->add_option("--i-min", case_args.i_min, "Lowest probe current");
  case_study->add_option("--i-max", case_args.i_max, "Highest probe current");
  case_study->add_option("--points", case_args.points, "Number of probe points");
  case_study->add_option("--out", case_args.out_path, "Also write the CSV here");

  GradCheckArgs grad_args;
  CLI::App* grad_check =
      app.add_subcommand("grad-check", "Cross-check the backward pass on random problems");
  grad_check->add_option("--trials", grad_args.trials, "Number of random problems");
  grad_check->add_option("--seed", grad_args.seed, "Problem generator seed");
  grad_check->add_option("--abs-tol", grad_args.abs_tol, "Oracle agreement tolerance");
  grad_check->add_flag("--fd", grad_args.with_fd, "Also run finite differences");
  grad_check->add_option("--fd-step", grad_args.fd_step, "Finite-difference probe size");
  grad_check->add_option("--fd-tol", grad_args.fd_tol, "Finite-difference tolerance");
  grad_check
      ->add_option("--corrupt-surrogate", grad_args.surrogate_scale,
                   "Scale the step relaxation's derivative (negative control)")
      ->group("");  // hidden

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    if (e.get_exit_code() == 0) return app.exit(e);  // --help and friends
    app.exit(e);
    return kExitUsage;
  }

  try {
    if (train->parsed()) {
      if (train_args.config_path.empty() && train_args.resume_path.empty()) {
        dsqn::log_error("train needs --config or --resume");
        return kExitUsage;
      }
      return cmd_train(train_args);
    }
    if (evalc->parsed()) return cmd_eval(eval_args);
    if (attack->parsed()) return cmd_attack(attack_args);
    if (case_study->parsed()) return cmd_case_study(case_args);
    if (grad_check->parsed()) return cmd_grad_check(grad_args);
  } catch (const dsqn::ContractViolation& e) {
    dsqn::log_error(e.what());
    return kExitUsage;
  } catch (const std::exception& e) {
    dsqn::log_error(e.what());
    return kExitCheckFailed;
  }
  return kExitUsage;
}
