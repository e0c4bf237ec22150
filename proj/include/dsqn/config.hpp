#pragma once

#include <cstdint>
#include <string>

#include "dsqn/attack.hpp"
#include "dsqn/neuron.hpp"
#include "dsqn/qlearn.hpp"

namespace dsqn {

// Complete description of a run. Serialized as a small TOML subset
// (top-level keys plus [network], [neuron], [train], [attack] sections;
// strings quoted, # comments allowed, unknown keys rejected) and echoed
// verbatim into checkpoints so a run can be resumed from the file alone.
struct RunConfig {
  std::string env = "catch";
  std::uint64_t seed = 1;
  std::string out_dir = "out";

  std::string architecture = "16C3S1-LIF-Flatten-128-LIF-NA-LI";
  std::string decoder = "max_mem";
  int sim_steps = 8;
  int frame_stack = 1;

  NeuronConfig neuron{};
  HyperParams train{};
  AttackConfig attack{};

  bool operator==(const RunConfig&) const = default;
};

void validate(const RunConfig& cfg);

// parse_config(serialize_config(c)) == c for any finite config (and for the
// infinities used as "disabled" sentinels, which print as inf).
RunConfig parse_config(const std::string& text);
RunConfig load_config(const std::string& path);
std::string serialize_config(const RunConfig& cfg);
void save_config(const std::string& path, const RunConfig& cfg);

}  // namespace dsqn
