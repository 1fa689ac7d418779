#pragma once

// Versioned single-file checkpoint:
//
//   "CORDACKP"            8-byte magic
//   uint32 version        little-endian
//   uint64 header_bytes   little-endian
//   header JSON           {"model": ModelConfig, "meta": {...},
//                          "blocks": [{"name", "offset", "count"}, ...]}
//   float32 payload       little-endian, blocks back to back
//
// Parameter blocks are keyed "<module path>/weight" and "<module path>/bias",
// e.g. "corr/W_d1/weight". Extra blocks (optimizer state) use their own prefix.

#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <map>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "corda/model.hpp"

namespace corda {

inline constexpr std::uint32_t kCheckpointVersion = 1;
inline constexpr char kCheckpointMagic[8] = {'C', 'O', 'R', 'D', 'A', 'C', 'K', 'P'};

inline nlohmann::json model_config_to_json(const ModelConfig& c) {
  return {{"backbone_widths", c.backbone_widths}, {"backbone_strides", c.backbone_strides},
          {"features", c.features},               {"decoder_width", c.decoder_width},
          {"classes", c.classes},                 {"use_correlation", c.use_correlation},
          {"tie_depth_init", c.tie_depth_init},   {"seed", c.seed}};
}

inline ModelConfig model_config_from_json(const nlohmann::json& j) {
  ModelConfig c;
  c.backbone_widths = j.at("backbone_widths").get<std::vector<int>>();
  c.backbone_strides = j.at("backbone_strides").get<std::vector<int>>();
  c.features = j.at("features").get<int>();
  c.decoder_width = j.at("decoder_width").get<int>();
  c.classes = j.at("classes").get<int>();
  c.use_correlation = j.at("use_correlation").get<bool>();
  c.tie_depth_init = j.at("tie_depth_init").get<bool>();
  c.seed = j.at("seed").get<std::uint64_t>();
  return c;
}

struct Checkpoint {
  ModelConfig config;
  nlohmann::json meta = nlohmann::json::object();
  std::map<std::string, FloatBuffer> blocks;
};

inline Checkpoint snapshot(Model& model, nlohmann::json meta = nlohmann::json::object()) {
  Checkpoint ck{model.config(), std::move(meta), {}};
  for (auto& [name, conv] : model.named_parameters()) {
    ck.blocks[name + "/weight"] = conv->weight;
    ck.blocks[name + "/bias"] = conv->bias;
  }
  return ck;
}

/// Rebuilds a model from a checkpoint; every parameter block must be present
/// with the expected size.
inline Model restore_model(const Checkpoint& ck) {
  Model m(ck.config);
  for (auto& [name, conv] : m.named_parameters()) {
    for (auto [suffix, dst] : {std::pair{"/weight", &conv->weight}, std::pair{"/bias", &conv->bias}}) {
      auto it = ck.blocks.find(name + suffix);
      if (it == ck.blocks.end()) throw FormatError("checkpoint lacks block " + name + suffix);
      if (it->second.size() != dst->size()) throw FormatError("checkpoint block size mismatch: " + name + suffix);
      *dst = it->second;
    }
  }
  return m;
}

namespace detail {

template <typename T>
void put_le(std::ostream& os, T v) {
  unsigned char b[sizeof(T)];
  for (std::size_t i = 0; i < sizeof(T); ++i) b[i] = static_cast<unsigned char>((static_cast<std::uint64_t>(v) >> (8 * i)) & 0xff);
  os.write(reinterpret_cast<const char*>(b), sizeof(T));
}

template <typename T>
T get_le(std::istream& is) {
  unsigned char b[sizeof(T)];
  if (!is.read(reinterpret_cast<char*>(b), sizeof(T))) throw FormatError("checkpoint truncated");
  std::uint64_t v = 0;
  for (std::size_t i = 0; i < sizeof(T); ++i) v |= static_cast<std::uint64_t>(b[i]) << (8 * i);
  return static_cast<T>(v);
}

}  // namespace detail

inline void save_checkpoint(const std::filesystem::path& path, const Checkpoint& ck) {
  nlohmann::json blocks = nlohmann::json::array();
  std::uint64_t offset = 0;
  for (const auto& [name, data] : ck.blocks) {
    blocks.push_back({{"name", name}, {"offset", offset}, {"count", data.size()}});
    offset += data.size();
  }
  const std::string header =
      nlohmann::json{{"model", model_config_to_json(ck.config)}, {"meta", ck.meta}, {"blocks", blocks}}.dump();

  std::ofstream os(path, std::ios::binary);
  if (!os) throw IoError("cannot write checkpoint " + path.string());
  os.write(kCheckpointMagic, sizeof(kCheckpointMagic));
  detail::put_le<std::uint32_t>(os, kCheckpointVersion);
  detail::put_le<std::uint64_t>(os, header.size());
  os.write(header.data(), static_cast<std::streamsize>(header.size()));
  for (const auto& [name, data] : ck.blocks)
    for (float f : data) {
      std::uint32_t bits;
      std::memcpy(&bits, &f, sizeof(bits));
      detail::put_le<std::uint32_t>(os, bits);
    }
  if (!os) throw IoError("write failed: " + path.string());
}

inline Checkpoint load_checkpoint(const std::filesystem::path& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw IoError("cannot open checkpoint " + path.string());
  char magic[8];
  if (!is.read(magic, sizeof(magic)) || std::memcmp(magic, kCheckpointMagic, sizeof(magic)) != 0)
    throw FormatError("not a checkpoint: " + path.string());
  const auto version = detail::get_le<std::uint32_t>(is);
  if (version != kCheckpointVersion) throw FormatError("unsupported checkpoint version " + std::to_string(version));
  const auto header_bytes = detail::get_le<std::uint64_t>(is);
  std::string header(header_bytes, '\0');
  if (!is.read(header.data(), static_cast<std::streamsize>(header_bytes))) throw FormatError("checkpoint truncated");

  Checkpoint ck;
  try {
    const auto j = nlohmann::json::parse(header);
    ck.config = model_config_from_json(j.at("model"));
    ck.meta = j.at("meta");
    for (const auto& b : j.at("blocks")) {
      auto& data = ck.blocks[b.at("name").get<std::string>()];
      data.resize(b.at("count").get<std::size_t>());
    }
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(std::string("bad checkpoint header: ") + e.what());
  }
  // Blocks are written in map order, which load reproduces.
  for (auto& [name, data] : ck.blocks)
    for (auto& f : data) {
      const auto bits = detail::get_le<std::uint32_t>(is);
      std::memcpy(&f, &bits, sizeof(f));
    }
  return ck;
}

}  // namespace corda
