#include "dsqn/checkpoint.hpp"

#include <cstring>
#include <fstream>

namespace dsqn {

namespace {

void put_u32(std::string& out, std::uint32_t v) {
  for (int i = 0; i < 4; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
}

void put_u64(std::string& out, std::uint64_t v) {
  for (int i = 0; i < 8; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
}

std::uint32_t get_u32(const unsigned char* p) {
  std::uint32_t v = 0;
  for (int i = 0; i < 4; ++i) v |= static_cast<std::uint32_t>(p[i]) << (8 * i);
  return v;
}

std::uint64_t get_u64(const unsigned char* p) {
  std::uint64_t v = 0;
  for (int i = 0; i < 8; ++i) v |= static_cast<std::uint64_t>(p[i]) << (8 * i);
  return v;
}

}  // namespace

void save_checkpoint(const std::string& path, const CheckpointData& data) {
  nlohmann::ordered_json header = data.header;
  nlohmann::ordered_json tensor_list = nlohmann::ordered_json::array();
  for (const auto& [name, values] : data.tensors) {
    tensor_list.push_back({{"name", name}, {"size", values.size()}});
  }
  header["tensors"] = std::move(tensor_list);
  const std::string header_text = header.dump();

  std::string blob;
  blob.append(kCheckpointMagic, sizeof(kCheckpointMagic));
  put_u32(blob, kCheckpointVersion);
  put_u64(blob, header_text.size());
  blob += header_text;
  for (const auto& [name, values] : data.tensors) {
    const std::size_t off = blob.size();
    blob.resize(off + values.size() * sizeof(float));
    std::memcpy(blob.data() + off, values.data(), values.size() * sizeof(float));
  }

  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw CheckpointError("cannot open for writing: " + path);
  out.write(blob.data(), static_cast<std::streamsize>(blob.size()));
  out.flush();
  if (!out) throw CheckpointError("short write: " + path);
}

CheckpointData load_checkpoint(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw CheckpointError("cannot open for reading: " + path);
  std::string blob((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  const auto* bytes = reinterpret_cast<const unsigned char*>(blob.data());

  if (blob.size() < sizeof(kCheckpointMagic) + 4 + 8) {
    throw TruncationError("file shorter than the fixed prelude: " + path);
  }
  if (std::memcmp(blob.data(), kCheckpointMagic, sizeof(kCheckpointMagic)) != 0) {
    throw BadMagicError("not a checkpoint file: " + path);
  }
  const std::uint32_t version = get_u32(bytes + 8);
  if (version != kCheckpointVersion) {
    throw VersionMismatchError("checkpoint version " + std::to_string(version) +
                               ", this build reads " + std::to_string(kCheckpointVersion));
  }
  const std::uint64_t header_len = get_u64(bytes + 12);
  const std::size_t header_off = sizeof(kCheckpointMagic) + 4 + 8;
  if (blob.size() < header_off + header_len) {
    throw TruncationError("header extends past end of file: " + path);
  }

  CheckpointData data;
  try {
    data.header = nlohmann::ordered_json::parse(blob.substr(header_off, header_len));
  } catch (const nlohmann::json::exception& e) {
    throw CheckpointError(std::string("corrupt checkpoint header: ") + e.what());
  }
  if (!data.header.contains("tensors") || !data.header["tensors"].is_array()) {
    throw CheckpointError("checkpoint header lacks a tensors array: " + path);
  }

  std::size_t off = header_off + header_len;
  for (const auto& entry : data.header["tensors"]) {
    const std::string name = entry.at("name").get<std::string>();
    const std::size_t size = entry.at("size").get<std::size_t>();
    const std::size_t bytes_needed = size * sizeof(float);
    if (blob.size() < off + bytes_needed) {
      throw TruncationError("payload for tensor \"" + name + "\" extends past end of file");
    }
    std::vector<float> values(size);
    std::memcpy(values.data(), blob.data() + off, bytes_needed);
    data.tensors.emplace_back(name, std::move(values));
    off += bytes_needed;
  }
  if (off != blob.size()) {
    throw CheckpointError("trailing bytes after the declared payload: " + path);
  }
  return data;
}

}  // namespace dsqn
