#pragma once

#include <bit>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <iterator>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "dwe/config.hpp"
#include "dwe/errors.hpp"
#include "dwe/param_store.hpp"
#include "dwe/rng.hpp"

namespace dwe {

// Layout: "DWECKPT1" | u64 manifest length | manifest JSON | f32 blobs |
// u64 FNV-1a of everything before it. Integers and floats little-endian.
inline constexpr char kCheckpointMagic[8] = {'D', 'W', 'E', 'C', 'K', 'P', 'T', '1'};
inline constexpr int kCheckpointSchema = 1;

struct Checkpoint {
  TrainConfig config;
  ParamStore<float> params;
  std::string data_dir;
};

namespace detail {

inline void put_u64(std::string& out, std::uint64_t v) {
  for (int i = 0; i < 8; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
}

inline std::uint64_t get_u64(const std::string& in, std::size_t pos) {
  std::uint64_t v = 0;
  for (int i = 0; i < 8; ++i) v |= static_cast<std::uint64_t>(static_cast<unsigned char>(in[pos + i])) << (8 * i);
  return v;
}

inline void put_f32(std::string& out, float f) {
  const auto bits = std::bit_cast<std::uint32_t>(f);
  for (int i = 0; i < 4; ++i) out.push_back(static_cast<char>((bits >> (8 * i)) & 0xff));
}

inline float get_f32(const std::string& in, std::size_t pos) {
  std::uint32_t bits = 0;
  for (int i = 0; i < 4; ++i) bits |= static_cast<std::uint32_t>(static_cast<unsigned char>(in[pos + i])) << (8 * i);
  return std::bit_cast<float>(bits);
}

}  // namespace detail

inline std::string serialize_checkpoint(const Checkpoint& ck) {
  nlohmann::json manifest;
  manifest["schema_version"] = kCheckpointSchema;
  manifest["config"] = to_json_value(ck.config);
  manifest["config_hash"] = hex64(config_hash(ck.config));
  manifest["data_dir"] = ck.data_dir;
  manifest["step"] = ck.params.step();
  nlohmann::json table = nlohmann::json::array();
  std::string blobs;
  for (const auto& [name, p] : ck.params.params()) {
    table.push_back({{"name", name},
                     {"shape", {p.rows(), p.cols()}},
                     {"offset", blobs.size()},
                     {"count", p.values.size()},
                     {"trainable", p.requires_grad}});
    for (float v : p.values) detail::put_f32(blobs, v);
  }
  manifest["tensors"] = table;
  const std::string mtext = manifest.dump();

  std::string out(kCheckpointMagic, sizeof kCheckpointMagic);
  detail::put_u64(out, mtext.size());
  out += mtext;
  out += blobs;
  detail::put_u64(out, fnv1a(out));
  return out;
}

inline Checkpoint deserialize_checkpoint(const std::string& bytes) {
  if (bytes.size() < 24) throw CorruptionError("checkpoint truncated: " + std::to_string(bytes.size()) + " bytes");
  if (std::memcmp(bytes.data(), kCheckpointMagic, 8) != 0) throw CorruptionError("checkpoint: bad magic");
  const std::size_t body = bytes.size() - 8;
  if (fnv1a(std::string_view(bytes.data(), body)) != detail::get_u64(bytes, body)) {
    throw CorruptionError("checkpoint: content hash mismatch (truncated or modified file)");
  }
  const std::uint64_t mlen = detail::get_u64(bytes, 8);
  if (mlen > body - 16) throw CorruptionError("checkpoint: manifest length out of range");
  nlohmann::json manifest;
  try {
    manifest = nlohmann::json::parse(bytes.substr(16, mlen));
  } catch (const nlohmann::json::exception& e) {
    throw CorruptionError(std::string("checkpoint: malformed manifest: ") + e.what());
  }
  if (manifest.value("schema_version", -1) != kCheckpointSchema) {
    throw CorruptionError("checkpoint: unsupported schema version " + manifest.value("schema_version", nlohmann::json()).dump());
  }
  Checkpoint ck;
  try {
    ck.config = manifest.at("config").get<TrainConfig>();
    ck.data_dir = manifest.value("data_dir", "");
    if (manifest.at("config_hash").get<std::string>() != hex64(config_hash(ck.config))) {
      throw CorruptionError("checkpoint: config hash mismatch");
    }
    const std::size_t blob_start = 16 + mlen;
    const std::size_t blob_len = body - blob_start;
    for (const auto& t : manifest.at("tensors")) {
      const auto rows = t.at("shape").at(0).get<std::size_t>();
      const auto cols = t.at("shape").at(1).get<std::size_t>();
      const auto offset = t.at("offset").get<std::size_t>();
      const auto count = t.at("count").get<std::size_t>();
      if (count != rows * cols || offset + 4 * count > blob_len) {
        throw CorruptionError("checkpoint: tensor '" + t.at("name").get<std::string>() + "' out of bounds");
      }
      Tensor<float> p(rows, cols);
      for (std::size_t k = 0; k < count; ++k) p.values[k] = detail::get_f32(bytes, blob_start + offset + 4 * k);
      auto& added = ck.params.add(t.at("name").get<std::string>(), std::move(p));
      added.requires_grad = t.value("trainable", true);
    }
    ck.params.set_step(manifest.value("step", std::uint64_t{0}));
  } catch (const nlohmann::json::exception& e) {
    throw CorruptionError(std::string("checkpoint: invalid manifest: ") + e.what());
  } catch (const UsageError& e) {
    throw CorruptionError(std::string("checkpoint: ") + e.what());
  }
  return ck;
}

inline void save_checkpoint(const std::filesystem::path& path, const Checkpoint& ck) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary);
  const std::string bytes = serialize_checkpoint(ck);
  out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw Error("cannot write checkpoint '" + path.string() + "'");
}

inline Checkpoint load_checkpoint(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot open checkpoint '" + path.string() + "'");
  const std::string bytes{std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
  return deserialize_checkpoint(bytes);
}

}  // namespace dwe
