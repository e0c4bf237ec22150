#include "dsqn/config.hpp"

#include <algorithm>
#include <cctype>
#include <cstdio>
#include <cstdlib>
#include <fstream>
#include <functional>
#include <map>
#include <sstream>

#include "dsqn/check.hpp"
#include "dsqn/envs.hpp"

namespace dsqn {

void validate(const RunConfig& cfg) {
  const auto names = env_names();
  if (std::find(names.begin(), names.end(), cfg.env) == names.end()) {
    throw ContractViolation("unknown environment: " + cfg.env);
  }
  DSQN_REQUIRE(!cfg.out_dir.empty(), "out_dir must be set");
  DSQN_REQUIRE(cfg.sim_steps >= 1, "sim_steps must be positive");
  DSQN_REQUIRE(cfg.frame_stack >= 1, "frame_stack must be positive");
  parse_decoder(cfg.decoder);
  validate(cfg.neuron, /*spiking=*/true);
  validate(cfg.train);
  validate(cfg.attack);
}

namespace {

std::string trim(const std::string& s) {
  std::size_t b = 0, e = s.size();
  while (b < e && std::isspace(static_cast<unsigned char>(s[b]))) ++b;
  while (e > b && std::isspace(static_cast<unsigned char>(s[e - 1]))) --e;
  return s.substr(b, e - b);
}

// Drops a trailing comment, respecting double-quoted strings.
std::string strip_comment(const std::string& line) {
  bool in_quotes = false;
  for (std::size_t i = 0; i < line.size(); ++i) {
    if (line[i] == '"') in_quotes = !in_quotes;
    if (line[i] == '#' && !in_quotes) return line.substr(0, i);
  }
  return line;
}

[[noreturn]] void fail(int lineno, const std::string& what) {
  throw ContractViolation("config line " + std::to_string(lineno) + ": " + what);
}

struct Setter {
  std::function<void(RunConfig&, const std::string&, int)> apply;
};

double parse_number(const std::string& v, int lineno) {
  char* end = nullptr;
  const double d = std::strtod(v.c_str(), &end);
  if (end != v.c_str() + v.size() || v.empty()) fail(lineno, "not a number: " + v);
  return d;
}

long long parse_integer(const std::string& v, int lineno) {
  char* end = nullptr;
  const long long i = std::strtoll(v.c_str(), &end, 10);
  if (end != v.c_str() + v.size() || v.empty()) fail(lineno, "not an integer: " + v);
  return i;
}

std::uint64_t parse_u64(const std::string& v, int lineno) {
  char* end = nullptr;
  if (!v.empty() && v[0] == '-') fail(lineno, "expected a non-negative integer: " + v);
  const unsigned long long i = std::strtoull(v.c_str(), &end, 10);
  if (end != v.c_str() + v.size() || v.empty()) fail(lineno, "not an integer: " + v);
  return static_cast<std::uint64_t>(i);
}

std::string parse_string(const std::string& v, int lineno) {
  if (v.size() < 2 || v.front() != '"' || v.back() != '"') {
    fail(lineno, "expected a quoted string, got: " + v);
  }
  return v.substr(1, v.size() - 2);
}

using KeyTable = std::map<std::string, Setter>;

const std::map<std::string, KeyTable>& key_tables() {
  auto integer = [](auto member) {
    return Setter{[member](RunConfig& c, const std::string& v, int ln) {
      std::invoke(member, c) = static_cast<std::remove_reference_t<decltype(std::invoke(
          member, c))>>(parse_integer(v, ln));
    }};
  };
  auto str = [](auto member) {
    return Setter{[member](RunConfig& c, const std::string& v, int ln) {
      std::invoke(member, c) = parse_string(v, ln);
    }};
  };

  static const std::map<std::string, KeyTable> tables = {
      {"",
       {
           {"env", str(&RunConfig::env)},
           {"seed", Setter{[](RunConfig& c, const std::string& v, int ln) {
              c.seed = parse_u64(v, ln);
            }}},
           {"out_dir", str(&RunConfig::out_dir)},
       }},
      {"network",
       {
           {"architecture", str(&RunConfig::architecture)},
           {"decoder", str(&RunConfig::decoder)},
           {"sim_steps", integer(&RunConfig::sim_steps)},
           {"frame_stack", integer(&RunConfig::frame_stack)},
       }},
      {"neuron",
       {
           {"tau", Setter{[](RunConfig& c, const std::string& v, int ln) {
              c.neuron.tau = parse_number(v, ln);
            }}},
           {"v_threshold", Setter{[](RunConfig& c, const std::string& v, int ln) {
              c.neuron.v_threshold = parse_number(v, ln);
            }}},
           {"v_reset", Setter{[](RunConfig& c, const std::string& v, int ln) {
              c.neuron.v_reset = parse_number(v, ln);
            }}},
       }},
      {"train",
       {
           {"gamma", Setter{[](RunConfig& c, const std::string& v, int ln) {
              c.train.gamma = parse_number(v, ln);
            }}},
           {"lr", Setter{[](RunConfig& c, const std::string& v, int ln) {
              c.train.lr = parse_number(v, ln);
            }}},
           {"adam_beta1", Setter{[](RunConfig& c, const std::string& v, int ln) {
              c.train.adam_beta1 = parse_number(v, ln);
            }}},
           {"adam_beta2", Setter{[](RunConfig& c, const std::string& v, int ln) {
              c.train.adam_beta2 = parse_number(v, ln);
            }}},
           {"adam_eps", Setter{[](RunConfig& c, const std::string& v, int ln) {
              c.train.adam_eps = parse_number(v, ln);
            }}},
           {"loss", Setter{[](RunConfig& c, const std::string& v, int ln) {
              const std::string s = parse_string(v, ln);
              if (s == "mse") {
                c.train.loss = LossKind::Mse;
              } else if (s == "huber") {
                c.train.loss = LossKind::Huber;
              } else {
                fail(ln, "loss must be \"mse\" or \"huber\"");
              }
            }}},
           {"batch_size", Setter{[](RunConfig& c, const std::string& v, int ln) {
              c.train.batch_size = static_cast<int>(parse_integer(v, ln));
            }}},
           {"replay_capacity", Setter{[](RunConfig& c, const std::string& v, int ln) {
              c.train.replay_capacity = static_cast<int>(parse_integer(v, ln));
            }}},
           {"warmup_steps", Setter{[](RunConfig& c, const std::string& v, int ln) {
              c.train.warmup_steps = static_cast<int>(parse_integer(v, ln));
            }}},
           {"target_sync_every", Setter{[](RunConfig& c, const std::string& v, int ln) {
              c.train.target_sync_every = static_cast<int>(parse_integer(v, ln));
            }}},
           {"eps_start", Setter{[](RunConfig& c, const std::string& v, int ln) {
              c.train.eps_start = parse_number(v, ln);
            }}},
           {"eps_end", Setter{[](RunConfig& c, const std::string& v, int ln) {
              c.train.eps_end = parse_number(v, ln);
            }}},
           {"eps_anneal_steps", Setter{[](RunConfig& c, const std::string& v, int ln) {
              c.train.eps_anneal_steps = parse_integer(v, ln);
            }}},
           {"train_steps", Setter{[](RunConfig& c, const std::string& v, int ln) {
              c.train.train_steps = parse_integer(v, ln);
            }}},
           {"eval_every", Setter{[](RunConfig& c, const std::string& v, int ln) {
              c.train.eval_every = parse_integer(v, ln);
            }}},
           {"eval_episodes", Setter{[](RunConfig& c, const std::string& v, int ln) {
              c.train.eval_episodes = static_cast<int>(parse_integer(v, ln));
            }}},
           {"eval_epsilon", Setter{[](RunConfig& c, const std::string& v, int ln) {
              c.train.eval_epsilon = parse_number(v, ln);
            }}},
           {"noop_max", Setter{[](RunConfig& c, const std::string& v, int ln) {
              c.train.noop_max = static_cast<int>(parse_integer(v, ln));
            }}},
           {"early_stop_eval", Setter{[](RunConfig& c, const std::string& v, int ln) {
              c.train.early_stop_eval = parse_number(v, ln);
            }}},
       }},
      {"attack",
       {
           {"epsilon", Setter{[](RunConfig& c, const std::string& v, int ln) {
              c.attack.epsilon = parse_number(v, ln);
            }}},
           {"max_iters", Setter{[](RunConfig& c, const std::string& v, int ln) {
              c.attack.max_iters = static_cast<int>(parse_integer(v, ln));
            }}},
           {"episodes", Setter{[](RunConfig& c, const std::string& v, int ln) {
              c.attack.episodes = static_cast<int>(parse_integer(v, ln));
            }}},
       }},
  };
  return tables;
}

std::string fmt_double(double v) {
  char buf[64];
  std::snprintf(buf, sizeof(buf), "%.17g", v);
  return buf;
}

}  // namespace

RunConfig parse_config(const std::string& text) {
  RunConfig cfg;
  const auto& tables = key_tables();
  std::string section;
  std::istringstream in(text);
  std::string raw;
  int lineno = 0;

  while (std::getline(in, raw)) {
    ++lineno;
    const std::string line = trim(strip_comment(raw));
    if (line.empty()) continue;

    if (line.front() == '[') {
      if (line.back() != ']') fail(lineno, "unterminated section header");
      section = trim(line.substr(1, line.size() - 2));
      if (tables.find(section) == tables.end() || section.empty()) {
        fail(lineno, "unknown section [" + section + "]");
      }
      continue;
    }

    const std::size_t eq = line.find('=');
    if (eq == std::string::npos) fail(lineno, "expected key = value");
    const std::string key = trim(line.substr(0, eq));
    const std::string value = trim(line.substr(eq + 1));
    if (key.empty()) fail(lineno, "empty key");
    if (value.empty()) fail(lineno, "empty value for key " + key);

    const KeyTable& table = tables.at(section);
    const auto it = table.find(key);
    if (it == table.end()) {
      const std::string where = section.empty() ? "top level" : "[" + section + "]";
      fail(lineno, "unknown key \"" + key + "\" in " + where);
    }
    it->second.apply(cfg, value, lineno);
  }
  return cfg;
}

RunConfig load_config(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ContractViolation("cannot open config file: " + path);
  std::ostringstream ss;
  ss << in.rdbuf();
  return parse_config(ss.str());
}

std::string serialize_config(const RunConfig& cfg) {
  std::ostringstream out;
  out << "env = \"" << cfg.env << "\"\n";
  out << "seed = " << cfg.seed << "\n";
  out << "out_dir = \"" << cfg.out_dir << "\"\n";
  out << "\n[network]\n";
  out << "architecture = \"" << cfg.architecture << "\"\n";
  out << "decoder = \"" << cfg.decoder << "\"\n";
  out << "sim_steps = " << cfg.sim_steps << "\n";
  out << "frame_stack = " << cfg.frame_stack << "\n";
  out << "\n[neuron]\n";
  out << "tau = " << fmt_double(cfg.neuron.tau) << "\n";
  out << "v_threshold = " << fmt_double(cfg.neuron.v_threshold) << "\n";
  out << "v_reset = " << fmt_double(cfg.neuron.v_reset) << "\n";
  out << "\n[train]\n";
  out << "gamma = " << fmt_double(cfg.train.gamma) << "\n";
  out << "lr = " << fmt_double(cfg.train.lr) << "\n";
  out << "adam_beta1 = " << fmt_double(cfg.train.adam_beta1) << "\n";
  out << "adam_beta2 = " << fmt_double(cfg.train.adam_beta2) << "\n";
  out << "adam_eps = " << fmt_double(cfg.train.adam_eps) << "\n";
  out << "loss = " << (cfg.train.loss == LossKind::Mse ? "\"mse\"" : "\"huber\"") << "\n";
  out << "batch_size = " << cfg.train.batch_size << "\n";
  out << "replay_capacity = " << cfg.train.replay_capacity << "\n";
  out << "warmup_steps = " << cfg.train.warmup_steps << "\n";
  out << "target_sync_every = " << cfg.train.target_sync_every << "\n";
  out << "eps_start = " << fmt_double(cfg.train.eps_start) << "\n";
  out << "eps_end = " << fmt_double(cfg.train.eps_end) << "\n";
  out << "eps_anneal_steps = " << cfg.train.eps_anneal_steps << "\n";
  out << "train_steps = " << cfg.train.train_steps << "\n";
  out << "eval_every = " << cfg.train.eval_every << "\n";
  out << "eval_episodes = " << cfg.train.eval_episodes << "\n";
  out << "eval_epsilon = " << fmt_double(cfg.train.eval_epsilon) << "\n";
  out << "noop_max = " << cfg.train.noop_max << "\n";
  out << "early_stop_eval = " << fmt_double(cfg.train.early_stop_eval) << "\n";
  out << "\n[attack]\n";
  out << "epsilon = " << fmt_double(cfg.attack.epsilon) << "\n";
  out << "max_iters = " << cfg.attack.max_iters << "\n";
  out << "episodes = " << cfg.attack.episodes << "\n";
  return out.str();
}

void save_config(const std::string& path, const RunConfig& cfg) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw ContractViolation("cannot write config file: " + path);
  out << serialize_config(cfg);
}

}  // namespace dsqn
