#pragma once

#include <memory>
#include <string>
#include <utility>
#include <vector>

#include "dsqn/checkpoint.hpp"
#include "dsqn/config.hpp"
#include "dsqn/qlearn.hpp"

namespace dsqn {

// Training and the serving paths (eval/attack) run in float32; the test
// oracles run the same templates in double.
using TrainerF = Trainer<float>;

inline QNetwork<float> build_network(const RunConfig& cfg, const Env& env) {
  auto specs = parse_architecture(cfg.architecture, env.action_count(), cfg.neuron);
  return make_network<float>(env.observation_shape(), std::move(specs), cfg.sim_steps,
                             parse_decoder(cfg.decoder));
}

inline std::unique_ptr<TrainerF> make_trainer(const RunConfig& cfg) {
  validate(cfg);
  auto env = make_env(cfg.env, cfg.frame_stack);
  auto eval_env = make_env(cfg.env, cfg.frame_stack);
  QNetwork<float> net = build_network(cfg, *env);
  return std::make_unique<TrainerF>(std::move(env), std::move(eval_env), std::move(net),
                                    cfg.train, cfg.seed);
}

namespace ckpt_detail {

inline std::vector<float> to_floats(const Mat<float>& m) {
  return std::vector<float>(m.data(), m.data() + m.size());
}

inline std::vector<float> to_floats(const Vec<float>& v) {
  return std::vector<float>(v.data(), v.data() + v.size());
}

inline void fill_mat(Mat<float>& m, const std::vector<float>& values, const std::string& name) {
  if (static_cast<std::size_t>(m.size()) != values.size()) {
    throw ShapeMismatchError("tensor \"" + name + "\" holds " + std::to_string(values.size()) +
                             " values, expected " + std::to_string(m.size()));
  }
  std::copy(values.begin(), values.end(), m.data());
}

inline Vec<float> to_vec(const std::vector<float>& values) {
  Vec<float> v(static_cast<Eigen::Index>(values.size()));
  std::copy(values.begin(), values.end(), v.data());
  return v;
}

inline nlohmann::ordered_json rng_json(const Rng& rng) {
  nlohmann::ordered_json arr = nlohmann::ordered_json::array();
  for (std::uint64_t w : rng.state()) arr.push_back(w);
  return arr;
}

inline Rng rng_from_json(const nlohmann::ordered_json& arr) {
  if (!arr.is_array() || arr.size() != 4) {
    throw CheckpointError("rng state must be four words");
  }
  Rng::State st;
  for (int i = 0; i < 4; ++i) st[i] = arr[i].get<std::uint64_t>();
  Rng rng;
  rng.set_state(st);
  return rng;
}

}  // namespace ckpt_detail

// Serializes the complete training state: both networks, optimizer moments,
// the replay ring, every RNG stream, the in-flight episode (env snapshot
// plus current observation), and the config text that reproduces the run.
inline CheckpointData trainer_checkpoint(const TrainerF& tr, const RunConfig& cfg) {
  using ckpt_detail::to_floats;
  CheckpointData data;
  auto& h = data.header;
  h["config"] = serialize_config(cfg);
  h["counters"] = {{"global_step", tr.global_step},
                   {"episode", tr.episode},
                   {"updates_since_sync", tr.updates_since_sync},
                   {"adam_t", tr.adam.t},
                   {"has_loss", tr.has_loss}};
  h["accumulators"] = {{"episode_return", tr.episode_return}, {"last_loss", tr.last_loss}};
  if (std::isfinite(tr.last_eval)) h["accumulators"]["last_eval"] = tr.last_eval;
  h["rng"] = {{"env", ckpt_detail::rng_json(tr.env_rng)},
              {"policy", ckpt_detail::rng_json(tr.policy_rng)},
              {"replay", ckpt_detail::rng_json(tr.replay_rng)},
              {"eval", ckpt_detail::rng_json(tr.eval_rng)}};
  h["env_state"] = tr.env->snapshot();
  h["net"] = {{"actions", tr.online.num_actions()},
              {"input", {tr.online.input_shape.channels, tr.online.input_shape.height,
                         tr.online.input_shape.width}}};
  h["replay"] = {{"size", tr.replay.size()},
                 {"write", tr.replay.write_index()},
                 {"capacity", tr.replay.capacity()}};

  for (std::size_t i = 0; i < tr.online.params.size(); ++i) {
    if (tr.online.params[i].size() == 0) continue;
    const std::string suffix = "." + std::to_string(i);
    data.tensors.emplace_back("online" + suffix, to_floats(tr.online.params[i]));
    data.tensors.emplace_back("target" + suffix, to_floats(tr.target.params[i]));
    data.tensors.emplace_back("adam_m" + suffix, to_floats(tr.adam.m[i]));
    data.tensors.emplace_back("adam_v" + suffix, to_floats(tr.adam.v[i]));
  }
  data.tensors.emplace_back("cur_obs", to_floats(tr.cur_obs));

  const auto& transitions = tr.replay.contents();
  const std::size_t n = transitions.size();
  const std::size_t obs_len = static_cast<std::size_t>(tr.online.input_shape.size());
  std::vector<float> rs(n * obs_len), rsn(n * obs_len), ra(n), rr(n), rd(n);
  for (std::size_t k = 0; k < n; ++k) {
    const auto& t = transitions[k];
    std::copy(t.s.data(), t.s.data() + obs_len, rs.begin() + k * obs_len);
    std::copy(t.s_next.data(), t.s_next.data() + obs_len, rsn.begin() + k * obs_len);
    ra[k] = static_cast<float>(t.a);
    rr[k] = t.r;
    rd[k] = t.done ? 1.0f : 0.0f;
  }
  data.tensors.emplace_back("replay.s", std::move(rs));
  data.tensors.emplace_back("replay.a", std::move(ra));
  data.tensors.emplace_back("replay.r", std::move(rr));
  data.tensors.emplace_back("replay.snext", std::move(rsn));
  data.tensors.emplace_back("replay.done", std::move(rd));
  return data;
}

inline RunConfig config_from_checkpoint(const CheckpointData& data) {
  if (!data.header.contains("config")) {
    throw CheckpointError("checkpoint header lacks the config echo");
  }
  return parse_config(data.header["config"].get<std::string>());
}

// Rebuilds a trainer in exactly the saved state. The config may be
// overridden (e.g. to extend train_steps), but the network geometry must
// match what was saved.
inline std::unique_ptr<TrainerF> trainer_from_checkpoint(const CheckpointData& data,
                                                         const RunConfig* override_cfg = nullptr) {
  using ckpt_detail::fill_mat;
  const RunConfig cfg = override_cfg != nullptr ? *override_cfg : config_from_checkpoint(data);
  std::unique_ptr<TrainerF> tr = make_trainer(cfg);

  const auto& hnet = data.header.at("net");
  const TensorShape want = tr->online.input_shape;
  const auto input = hnet.at("input");
  if (hnet.at("actions").get<int>() != tr->online.num_actions() ||
      input.at(0).get<int>() != want.channels || input.at(1).get<int>() != want.height ||
      input.at(2).get<int>() != want.width) {
    throw ShapeMismatchError("checkpoint geometry does not match the configured network");
  }

  for (std::size_t i = 0; i < tr->online.params.size(); ++i) {
    if (tr->online.params[i].size() == 0) continue;
    const std::string suffix = "." + std::to_string(i);
    fill_mat(tr->online.params[i], data.tensor("online" + suffix), "online" + suffix);
    fill_mat(tr->target.params[i], data.tensor("target" + suffix), "target" + suffix);
    fill_mat(tr->adam.m[i], data.tensor("adam_m" + suffix), "adam_m" + suffix);
    fill_mat(tr->adam.v[i], data.tensor("adam_v" + suffix), "adam_v" + suffix);
  }

  const auto& counters = data.header.at("counters");
  tr->global_step = counters.at("global_step").get<long>();
  tr->episode = counters.at("episode").get<long>();
  tr->updates_since_sync = counters.at("updates_since_sync").get<int>();
  tr->adam.t = counters.at("adam_t").get<long>();
  tr->has_loss = counters.at("has_loss").get<bool>();
  const auto& acc = data.header.at("accumulators");
  tr->episode_return = acc.at("episode_return").get<double>();
  tr->last_loss = acc.at("last_loss").get<double>();
  tr->last_eval = acc.contains("last_eval") ? acc.at("last_eval").get<double>()
                                            : std::numeric_limits<double>::quiet_NaN();

  const auto& rng = data.header.at("rng");
  tr->env_rng = ckpt_detail::rng_from_json(rng.at("env"));
  tr->policy_rng = ckpt_detail::rng_from_json(rng.at("policy"));
  tr->replay_rng = ckpt_detail::rng_from_json(rng.at("replay"));
  tr->eval_rng = ckpt_detail::rng_from_json(rng.at("eval"));

  tr->env->restore(data.header.at("env_state").get<std::vector<double>>());
  const std::vector<float>& obs = data.tensor("cur_obs");
  if (obs.size() != static_cast<std::size_t>(tr->online.input_shape.size())) {
    throw ShapeMismatchError("cur_obs length does not match the network input");
  }
  tr->cur_obs = ckpt_detail::to_vec(obs);

  const auto& hreplay = data.header.at("replay");
  const std::size_t n = hreplay.at("size").get<std::size_t>();
  if (hreplay.at("capacity").get<std::size_t>() != tr->replay.capacity()) {
    throw ShapeMismatchError("replay capacity does not match the configured run");
  }
  const std::size_t obs_len = static_cast<std::size_t>(tr->online.input_shape.size());
  const auto& rs = data.tensor("replay.s");
  const auto& ra = data.tensor("replay.a");
  const auto& rr = data.tensor("replay.r");
  const auto& rsn = data.tensor("replay.snext");
  const auto& rd = data.tensor("replay.done");
  if (rs.size() != n * obs_len || rsn.size() != n * obs_len || ra.size() != n ||
      rr.size() != n || rd.size() != n) {
    throw ShapeMismatchError("replay tensors disagree with the declared size");
  }
  std::vector<Transition<float>> transitions(n);
  for (std::size_t k = 0; k < n; ++k) {
    Transition<float>& t = transitions[k];
    t.s = Vec<float>(static_cast<Eigen::Index>(obs_len));
    t.s_next = Vec<float>(static_cast<Eigen::Index>(obs_len));
    std::copy(rs.begin() + k * obs_len, rs.begin() + (k + 1) * obs_len, t.s.data());
    std::copy(rsn.begin() + k * obs_len, rsn.begin() + (k + 1) * obs_len, t.s_next.data());
    t.a = static_cast<int>(ra[k]);
    t.r = rr[k];
    t.done = rd[k] != 0.0f;
  }
  tr->replay.restore(std::move(transitions), hreplay.at("write").get<std::size_t>());
  return tr;
}

// Network-only view for eval/attack: rebuilds the online network from a
// checkpoint without touching training state.
struct LoadedNetwork {
  RunConfig cfg;
  QNetwork<float> net;
};

inline LoadedNetwork network_from_checkpoint(const CheckpointData& data) {
  LoadedNetwork out{config_from_checkpoint(data), {}};
  const auto env = make_env(out.cfg.env, out.cfg.frame_stack);
  out.net = build_network(out.cfg, *env);
  for (std::size_t i = 0; i < out.net.params.size(); ++i) {
    if (out.net.params[i].size() == 0) continue;
    const std::string name = "online." + std::to_string(i);
    ckpt_detail::fill_mat(out.net.params[i], data.tensor(name), name);
  }
  return out;
}

}  // namespace dsqn
