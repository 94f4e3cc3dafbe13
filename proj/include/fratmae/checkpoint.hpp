#ifndef FRATMAE_CHECKPOINT_HPP
#define FRATMAE_CHECKPOINT_HPP

#include <cstring>
#include <filesystem>
#include <fstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "fratmae/config.hpp"
#include "fratmae/optim.hpp"
#include "fratmae/params.hpp"

namespace fratmae {

inline constexpr char kCheckpointMagic[8] = {'F', 'R', 'A', 'T', 'C', 'K', 'P', 'T'};
inline constexpr uint32_t kCheckpointVersion = 1;

// Versioned on-disk training state: header JSON (config snapshot, RNG state,
// vocabulary, tensor directory) followed by raw little-endian float32 blobs
// in directory order. Training runs in float32, so that is the only dtype.
struct Checkpoint {
  std::string ablation;
  int epoch = 0;
  int64_t global_step = 0;
  int64_t total_steps = 0;
  std::string rng_state;
  nlohmann::json config;
  std::vector<std::string> vocab_words;
  int64_t adam_step_count = 0;
  nn::ParamStore<float> params;
  std::map<std::string, Tensor<float>> adam_m, adam_v;
};

namespace detail {

inline void write_u32_le(std::ostream& os, uint32_t v) {
  const char b[4] = {static_cast<char>(v & 0xff), static_cast<char>((v >> 8) & 0xff),
                     static_cast<char>((v >> 16) & 0xff), static_cast<char>((v >> 24) & 0xff)};
  os.write(b, 4);
}
inline uint32_t read_u32_le(std::istream& is) {
  unsigned char b[4];
  is.read(reinterpret_cast<char*>(b), 4);
  return static_cast<uint32_t>(b[0]) | (static_cast<uint32_t>(b[1]) << 8) |
         (static_cast<uint32_t>(b[2]) << 16) | (static_cast<uint32_t>(b[3]) << 24);
}
inline void write_u64_le(std::ostream& os, uint64_t v) {
  write_u32_le(os, static_cast<uint32_t>(v & 0xffffffffu));
  write_u32_le(os, static_cast<uint32_t>(v >> 32));
}
inline uint64_t read_u64_le(std::istream& is) {
  const uint64_t lo = read_u32_le(is);
  const uint64_t hi = read_u32_le(is);
  return lo | (hi << 32);
}

inline void write_f32_blob(std::ostream& os, const std::vector<float>& v) {
  for (float x : v) {
    uint32_t u;
    std::memcpy(&u, &x, 4);
    write_u32_le(os, u);
  }
}
inline void read_f32_blob(std::istream& is, std::vector<float>& v) {
  for (float& x : v) {
    const uint32_t u = read_u32_le(is);
    std::memcpy(&x, &u, 4);
  }
}

}  // namespace detail

inline void write_checkpoint(const Checkpoint& ck, const std::string& path) {
  nlohmann::json header;
  header["format_version"] = kCheckpointVersion;
  header["ablation"] = ck.ablation;
  header["epoch"] = ck.epoch;
  header["global_step"] = ck.global_step;
  header["total_steps"] = ck.total_steps;
  header["rng"] = ck.rng_state;
  header["config"] = ck.config;
  header["vocab"] = ck.vocab_words;
  header["adam_step_count"] = ck.adam_step_count;
  header["dtype"] = "f32";
  nlohmann::json dir = nlohmann::json::array();
  const auto describe = [&](const std::string& name, const Tensor<float>& t, const char* kind) {
    dir.push_back({{"name", name}, {"shape", t.shape}, {"kind", kind}});
  };
  for (const auto& [name, t] : ck.params.items) describe(name, t, "param");
  for (const auto& [name, t] : ck.adam_m) describe(name, t, "adam_m");
  for (const auto& [name, t] : ck.adam_v) describe(name, t, "adam_v");
  header["tensors"] = dir;
  const std::string header_str = header.dump();

  // atomic: write to a temp file in the same directory, then rename
  const std::string tmp = path + ".tmp";
  {
    std::ofstream os(tmp, std::ios::binary | std::ios::trunc);
    if (!os) throw IoError("cannot write checkpoint: " + tmp);
    os.write(kCheckpointMagic, 8);
    detail::write_u32_le(os, kCheckpointVersion);
    detail::write_u64_le(os, header_str.size());
    os.write(header_str.data(), static_cast<std::streamsize>(header_str.size()));
    for (const auto& [name, t] : ck.params.items) detail::write_f32_blob(os, t.v);
    for (const auto& [name, t] : ck.adam_m) detail::write_f32_blob(os, t.v);
    for (const auto& [name, t] : ck.adam_v) detail::write_f32_blob(os, t.v);
    if (!os) throw IoError("short write on checkpoint: " + tmp);
  }
  std::filesystem::rename(tmp, path);
}

inline Checkpoint read_checkpoint(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw IoError("cannot open checkpoint: " + path);
  char magic[8];
  is.read(magic, 8);
  if (!is || std::memcmp(magic, kCheckpointMagic, 8) != 0)
    throw CheckpointError("not a checkpoint file: " + path);
  const uint32_t version = detail::read_u32_le(is);
  if (version != kCheckpointVersion)
    throw CheckpointVersionError("unsupported checkpoint version " + std::to_string(version));
  const uint64_t header_len = detail::read_u64_le(is);
  std::string header_str(header_len, '\0');
  is.read(header_str.data(), static_cast<std::streamsize>(header_len));
  if (!is) throw CheckpointError("truncated checkpoint header: " + path);

  nlohmann::json header;
  try {
    header = nlohmann::json::parse(header_str);
  } catch (const nlohmann::json::exception& e) {
    throw CheckpointError(std::string("corrupt checkpoint header: ") + e.what());
  }

  Checkpoint ck;
  try {
    ck.ablation = header.at("ablation").get<std::string>();
    ck.epoch = header.at("epoch").get<int>();
    ck.global_step = header.at("global_step").get<int64_t>();
    ck.total_steps = header.at("total_steps").get<int64_t>();
    ck.rng_state = header.at("rng").get<std::string>();
    ck.config = header.at("config");
    ck.vocab_words = header.at("vocab").get<std::vector<std::string>>();
    ck.adam_step_count = header.at("adam_step_count").get<int64_t>();
    for (const auto& entry : header.at("tensors")) {
      const std::string name = entry.at("name").get<std::string>();
      const Shape shape = entry.at("shape").get<Shape>();
      const std::string kind = entry.at("kind").get<std::string>();
      Tensor<float> t(shape);
      detail::read_f32_blob(is, t.v);
      if (!is) throw CheckpointError("truncated checkpoint blob: " + path);
      if (kind == "param")
        ck.params.items.emplace(name, std::move(t));
      else if (kind == "adam_m")
        ck.adam_m.emplace(name, std::move(t));
      else if (kind == "adam_v")
        ck.adam_v.emplace(name, std::move(t));
      else
        throw CheckpointError("unknown tensor kind: " + kind);
    }
  } catch (const nlohmann::json::exception& e) {
    throw CheckpointError(std::string("corrupt checkpoint header: ") + e.what());
  }
  return ck;
}

// Copies the pre-trained encoder weights into a downstream store; the
// transfer must be bit-identical (verified by tests).
inline int load_encoder_weights(nn::ParamStore<float>& dst, const Checkpoint& ck) {
  int copied = 0;
  for (const auto& [name, t] : ck.params.items) {
    if (name.rfind("enc_ct.", 0) != 0 && name.rfind("enc_pet.", 0) != 0) continue;
    if (!dst.has(name)) continue;
    Tensor<float>& target = dst.at(name);
    if (target.shape != t.shape)
      throw CheckpointError("encoder weight shape mismatch for " + name +
                            " (pre-training and downstream configs disagree)");
    target.v = t.v;
    ++copied;
  }
  if (copied == 0) throw CheckpointError("checkpoint carries no matching encoder weights");
  return copied;
}

}  // namespace fratmae

#endif
