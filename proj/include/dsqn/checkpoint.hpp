#pragma once

#include <cstdint>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include <json.hpp>

namespace dsqn {

struct CheckpointError : std::runtime_error {
  using std::runtime_error::runtime_error;
};
// The file does not start with the expected magic bytes.
struct BadMagicError final : CheckpointError {
  using CheckpointError::CheckpointError;
};
// The format version is one this build does not read.
struct VersionMismatchError final : CheckpointError {
  using CheckpointError::CheckpointError;
};
// A stored tensor does not fit what the run expects (raised on restore).
struct ShapeMismatchError final : CheckpointError {
  using CheckpointError::CheckpointError;
};
// The file ends before the bytes its own header promises.
struct TruncationError final : CheckpointError {
  using CheckpointError::CheckpointError;
};

inline constexpr char kCheckpointMagic[8] = {'D', 'S', 'Q', 'N', 'C', 'K', 'P', 'T'};
inline constexpr std::uint32_t kCheckpointVersion = 1;

// On-disk layout (all integers little-endian): 8 magic bytes, u32 version,
// u64 header length, UTF-8 JSON header, then the raw float32 payload of
// every tensor in the order the header's "tensors" array declares.
struct CheckpointData {
  nlohmann::ordered_json header;
  std::vector<std::pair<std::string, std::vector<float>>> tensors;

  const std::vector<float>& tensor(const std::string& name) const {
    for (const auto& [n, t] : tensors) {
      if (n == name) return t;
    }
    throw ShapeMismatchError("checkpoint is missing tensor: " + name);
  }
};

void save_checkpoint(const std::string& path, const CheckpointData& data);
CheckpointData load_checkpoint(const std::string& path);

}  // namespace dsqn
