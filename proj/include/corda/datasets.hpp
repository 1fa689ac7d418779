#pragma once

// On-disk dataset format, sample loading, depth normalization and the
// synthetic dual-domain scene generator.
//
// Layout of a dataset root:
//   <root>/manifest.json
//   <root>/images/NNNNNN.png   8-bit RGB
//   <root>/labels/NNNNNN.png   8-bit gray, class id or 255 (ignore)
//   <root>/depth/NNNNNN.png    16-bit gray, round(depth / d_max * 65535), 0 = invalid

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <random>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "corda/image_io.hpp"
#include "corda/tensor.hpp"

namespace corda {

namespace fs = std::filesystem;

struct Sample {
  Grid<float> image;               // H x W x 3, [0, 1]
  Grid<std::uint8_t> semantics;    // H x W, class id or kIgnoreLabel
  Grid<float> depth;               // H x W meters, 0 = invalid
  Domain domain = Domain::kSource;

  int height() const { return image.height(); }
  int width() const { return image.width(); }

  void check(int classes) const {
    require(image.channels() == 3, "Sample: image must have 3 channels");
    require(semantics.same_dims(height(), width()) && depth.same_dims(height(), width()),
            "Sample: image, semantics and depth dims differ");
    for (auto v : semantics.data())
      require(v < classes || v == kIgnoreLabel, "Sample: label out of range");
    for (auto d : depth.data()) require(d >= 0.0f, "Sample: negative depth");
  }
};

struct SampleRecord {
  std::string image;
  std::string semantics;
  std::string depth;
  std::string split = "train";
};

struct DatasetManifest {
  fs::path root;
  Domain domain = Domain::kSource;
  std::vector<SampleRecord> records;
  int classes = 0;
  std::vector<std::string> class_names;
  double d_min = 1.0;
  double d_max = 80.0;
  int height = 0;
  int width = 0;

  /// Record indices belonging to the named split.
  std::vector<int> split_indices(const std::string& split) const {
    std::vector<int> out;
    for (int i = 0; i < static_cast<int>(records.size()); ++i)
      if (records[i].split == split) out.push_back(i);
    return out;
  }
};

inline constexpr int kManifestVersion = 1;

inline nlohmann::json manifest_to_json(const DatasetManifest& m) {
  nlohmann::json recs = nlohmann::json::array();
  for (const auto& r : m.records)
    recs.push_back({{"image", r.image}, {"semantics", r.semantics}, {"depth", r.depth},
                    {"split", r.split}});
  return {{"format_version", kManifestVersion},
          {"domain", domain_name(m.domain)},
          {"classes", m.classes},
          {"class_names", m.class_names},
          {"d_min", m.d_min},
          {"d_max", m.d_max},
          {"height", m.height},
          {"width", m.width},
          {"records", recs}};
}

inline void write_manifest(const DatasetManifest& m) {
  std::ofstream f(m.root / "manifest.json");
  if (!f) throw IoError("cannot write manifest under " + m.root.string());
  f << manifest_to_json(m).dump(2) << '\n';
}

/// Reads <root>/manifest.json and checks that every referenced file exists.
inline DatasetManifest read_manifest(const fs::path& root) {
  std::ifstream f(root / "manifest.json");
  if (!f) throw IoError("missing manifest: " + (root / "manifest.json").string());
  nlohmann::json j;
  try {
    f >> j;
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(std::string("manifest is not valid JSON: ") + e.what());
  }
  DatasetManifest m;
  try {
    if (j.at("format_version").get<int>() != kManifestVersion)
      throw FormatError("unsupported manifest version");
    m.root = root;
    const auto dom = j.at("domain").get<std::string>();
    if (dom != "source" && dom != "target") throw FormatError("bad manifest domain: " + dom);
    m.domain = dom == "source" ? Domain::kSource : Domain::kTarget;
    m.classes = j.at("classes").get<int>();
    m.class_names = j.at("class_names").get<std::vector<std::string>>();
    m.d_min = j.at("d_min").get<double>();
    m.d_max = j.at("d_max").get<double>();
    m.height = j.value("height", 0);
    m.width = j.value("width", 0);
    for (const auto& r : j.at("records"))
      m.records.push_back({r.at("image").get<std::string>(), r.at("semantics").get<std::string>(),
                           r.at("depth").get<std::string>(), r.value("split", "train")});
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(std::string("malformed manifest: ") + e.what());
  }
  if (!(m.d_min > 0.0 && m.d_min < m.d_max)) throw ConfigError("manifest: need 0 < d_min < d_max");
  if (m.classes < 2 || static_cast<int>(m.class_names.size()) != m.classes)
    throw FormatError("manifest: class count and class names disagree");
  for (const auto& r : m.records)
    for (const auto* p : {&r.image, &r.semantics, &r.depth})
      if (!fs::exists(root / *p)) throw IoError("manifest references missing file " + *p);
  return m;
}

// ---------------------------------------------------------------------------
// Depth encoding

inline std::uint16_t encode_depth(float meters, double d_max) {
  if (!(meters > 0.0f)) return 0;
  const double s = std::round(static_cast<double>(meters) / d_max * 65535.0);
  return static_cast<std::uint16_t>(std::clamp(s, 1.0, 65535.0));
}

inline float decode_depth(std::uint16_t stored, double d_max) {
  return static_cast<float>(static_cast<double>(stored) / 65535.0 * d_max);
}

/// Loads record `index` of the manifest into memory.
inline Sample load_sample(const DatasetManifest& m, int index) {
  require(index >= 0 && index < static_cast<int>(m.records.size()), "load_sample: index out of range");
  const auto& rec = m.records[index];
  const auto rgb = io::read_rgb8(m.root / rec.image);
  const auto lab = io::read_gray8(m.root / rec.semantics);
  const auto dep = io::read_gray16(m.root / rec.depth);
  const int h = rgb.height(), w = rgb.width();
  if (!lab.same_dims(h, w) || !dep.same_dims(h, w))
    throw FormatError("sample " + std::to_string(index) + ": image/label/depth dims differ");

  Sample s;
  s.domain = m.domain;
  s.image = Grid<float>(h, w, 3);
  for (std::size_t i = 0; i < rgb.size(); ++i) s.image.data()[i] = rgb.data()[i] / 255.0f;
  s.semantics = lab;
  for (auto v : s.semantics.data())
    if (v >= m.classes && v != kIgnoreLabel)
      throw FormatError("sample " + std::to_string(index) + ": label id out of range");
  s.depth = Grid<float>(h, w);
  for (std::size_t i = 0; i < dep.size(); ++i) s.depth.data()[i] = decode_depth(dep.data()[i], m.d_max);
  return s;
}

inline std::vector<Sample> load_split(const DatasetManifest& m, const std::string& split) {
  std::vector<Sample> out;
  for (int i : m.split_indices(split)) out.push_back(load_sample(m, i));
  return out;
}

struct InverseDepth {
  Grid<float> value;          // [0, 1], 1 at d_min, 0 at d_max
  Grid<std::uint8_t> valid;   // 1 where depth > 0
};

/// Normalized inverse depth: (1/clamp(d) - 1/d_max) / (1/d_min - 1/d_max).
inline InverseDepth to_inverse_depth(const Grid<float>& depth, double d_min, double d_max) {
  if (!(d_min > 0.0 && d_min < d_max)) throw ConfigError("to_inverse_depth: need 0 < d_min < d_max");
  InverseDepth out{Grid<float>(depth.height(), depth.width()),
                   Grid<std::uint8_t>(depth.height(), depth.width())};
  const double lo = 1.0 / d_max, span = 1.0 / d_min - 1.0 / d_max;
  for (std::size_t i = 0; i < depth.size(); ++i) {
    const double d = depth.data()[i];
    if (!(d > 0.0)) continue;
    const double c = std::clamp(d, d_min, d_max);
    out.value.data()[i] = static_cast<float>(std::clamp((1.0 / c - lo) / span, 0.0, 1.0));
    out.valid.data()[i] = 1;
  }
  return out;
}

struct CropOffset {
  int y = 0;
  int x = 0;
};

template <typename T>
Grid<T> crop_grid(const Grid<T>& g, CropOffset off, int size) {
  Grid<T> out(size, size, g.channels());
  for (int y = 0; y < size; ++y)
    for (int x = 0; x < size; ++x)
      for (int c = 0; c < g.channels(); ++c) out(y, x, c) = g(off.y + y, off.x + x, c);
  return out;
}

inline Sample crop_at(const Sample& s, CropOffset off, int size) {
  require(off.y >= 0 && off.x >= 0 && off.y + size <= s.height() && off.x + size <= s.width(),
          "crop_at: window outside sample");
  return {crop_grid(s.image, off, size), crop_grid(s.semantics, off, size),
          crop_grid(s.depth, off, size), s.domain};
}

/// Draws a K x K window offset; image, semantics and depth share it.
template <typename Rng>
CropOffset random_crop_offset(int height, int width, int size, Rng& rng) {
  if (size <= 0 || size > std::min(height, width))
    throw ConfigError("random crop size " + std::to_string(size) + " exceeds sample dims");
  std::uniform_int_distribution<int> dy(0, height - size), dx(0, width - size);
  const int y = dy(rng);
  return {y, dx(rng)};
}

template <typename Rng>
Sample random_crop_pair(const Sample& s, int size, Rng& rng) {
  return crop_at(s, random_crop_offset(s.height(), s.width(), size, rng), size);
}

// ---------------------------------------------------------------------------
// Synthetic scene generator

using Color = std::array<float, 3>;

/// Appearance and noise parameters of one synthetic domain. Only the depth
/// noise, object count range and seed influence geometry; every other field
/// changes pixel colors only.
struct DomainShiftConfig {
  std::vector<Color> palette;      // per-class base color, [0, 1]
  float texture_noise = 0.05f;     // per-pixel uniform noise amplitude
  float instance_jitter = 0.05f;   // per-object color offset amplitude
  float gain = 1.0f;
  float bias = 0.0f;
  float fog = 0.0f;                // blend toward fog_color proportional to depth / d_max
  Color fog_color{0.7f, 0.7f, 0.7f};
  float depth_noise_std = 0.0f;    // meters, truncated at 3 std
  int min_objects = 1;
  int max_objects = 4;
  std::uint64_t seed = 0;

  void validate(int classes) const {
    if (texture_noise < 0 || instance_jitter < 0 || depth_noise_std < 0 || fog < 0)
      throw ConfigError("DomainShiftConfig: noise amplitudes must be >= 0");
    if (min_objects < 0 || max_objects < min_objects)
      throw ConfigError("DomainShiftConfig: empty object count range");
    if (static_cast<int>(palette.size()) < classes)
      throw ConfigError("DomainShiftConfig: palette has fewer colors than classes");
  }
};

struct GeneratorSpec {
  int count = 200;        // train samples
  int eval_count = 0;     // additional eval-split samples
  int height = 64;
  int width = 64;
  int classes = 5;
  double d_min = 1.0;
  double d_max = 80.0;
  Domain domain = Domain::kSource;
};

enum class SceneClass : int { kSky = 0, kGround = 1 };
enum class ObjectShape { kBox, kBall, kPole };

inline std::vector<std::string> default_class_names(int classes) {
  static const std::array<const char*, 5> base{"sky", "ground", "box", "ball", "pole"};
  std::vector<std::string> names;
  for (int c = 0; c < classes; ++c)
    names.push_back(c < 5 ? base[c] : "object" + std::to_string(c));
  return names;
}

inline ObjectShape shape_of_class(int cls) {
  switch ((cls - 2) % 3) {
    case 0: return ObjectShape::kBox;
    case 1: return ObjectShape::kBall;
    default: return ObjectShape::kPole;
  }
}

inline int horizon_row(int height) { return (height * 3) / 8; }

/// Noise-free ground depth in meters for a row at or below the horizon.
/// Inverse depth is linear in the row, so depth strictly decreases downward.
inline double ground_depth(int row, int height, double d_min, double d_max) {
  const int hz = horizon_row(height);
  const double far_inv = 1.0 / (0.75 * d_max), near_inv = 1.0 / (1.5 * d_min);
  const double t = static_cast<double>(row - hz) / std::max(1, height - 1 - hz);
  return 1.0 / (far_inv + t * (near_inv - far_inv));
}

namespace detail {

inline std::mt19937_64 stream_rng(std::uint64_t seed, int index, std::uint32_t stream) {
  std::seed_seq seq{static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32),
                    static_cast<std::uint32_t>(index), stream};
  return std::mt19937_64(seq);
}

struct PlacedObject {
  int cls = 2;
  int cx = 0;
  int base = 0;
  int size = 1;
  double depth = 1.0;
};

inline bool covers(const PlacedObject& o, int y, int x) {
  switch (shape_of_class(o.cls)) {
    case ObjectShape::kBox: {
      const int half = o.size / 2;
      return y <= o.base && y > o.base - o.size && x >= o.cx - half && x <= o.cx + half;
    }
    case ObjectShape::kBall: {
      const double r = o.size / 2.0;
      const double cy = o.base - r + 0.5;
      const double dy = y - cy, dx = x - o.cx;
      return dy * dy + dx * dx <= r * r;
    }
    case ObjectShape::kPole: {
      const int half = std::max(1, o.size / 6);
      return y <= o.base && y > o.base - 2 * o.size && x >= o.cx - half && x < o.cx + half;
    }
  }
  return false;
}

}  // namespace detail

/// Renders sample `index` of a domain entirely in memory. Geometry (labels and
/// noise-free depth) depends only on the seed, index and object range.
inline Sample render_scene(const DomainShiftConfig& cfg, const GeneratorSpec& spec, int index) {
  const int h = spec.height, w = spec.width;
  const int hz = horizon_row(h);
  auto geo = detail::stream_rng(cfg.seed, index, 1);
  auto look = detail::stream_rng(cfg.seed, index, 2);
  auto noise = detail::stream_rng(cfg.seed, index, 3);

  Sample s;
  s.domain = spec.domain;
  s.semantics = Grid<std::uint8_t>(h, w);
  s.depth = Grid<float>(h, w);
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x) {
      const bool sky = y < hz;
      s.semantics(y, x) = static_cast<std::uint8_t>(sky ? SceneClass::kSky : SceneClass::kGround);
      s.depth(y, x) = static_cast<float>(sky ? spec.d_max : ground_depth(y, h, spec.d_min, spec.d_max));
    }

  std::uniform_int_distribution<int> count_dist(cfg.min_objects, cfg.max_objects);
  std::uniform_int_distribution<int> cls_dist(2, spec.classes - 1);
  std::uniform_int_distribution<int> base_dist(hz + 2, h - 1);
  std::uniform_int_distribution<int> x_dist(0, w - 1);
  std::vector<detail::PlacedObject> objects(count_dist(geo));
  const double near_depth = ground_depth(h - 1, h, spec.d_min, spec.d_max);
  for (auto& o : objects) {
    o.cls = cls_dist(geo);
    o.base = base_dist(geo);
    o.cx = x_dist(geo);
    o.depth = ground_depth(o.base, h, spec.d_min, spec.d_max);
    o.size = std::max(3, static_cast<int>(std::lround(0.3 * h * near_depth / o.depth)));
  }
  std::stable_sort(objects.begin(), objects.end(),
                   [](const auto& a, const auto& b) { return a.depth > b.depth; });

  std::vector<int> owner(static_cast<std::size_t>(h) * w, -1);
  for (int k = 0; k < static_cast<int>(objects.size()); ++k) {
    const auto& o = objects[k];
    for (int y = 0; y < h; ++y)
      for (int x = 0; x < w; ++x)
        if (detail::covers(o, y, x)) {
          s.semantics(y, x) = static_cast<std::uint8_t>(o.cls);
          s.depth(y, x) = static_cast<float>(o.depth);
          owner[static_cast<std::size_t>(y) * w + x] = k;
        }
  }

  // Appearance: base color + per-instance offset + texture, fog by depth,
  // then global illumination.
  std::uniform_real_distribution<float> unit(-1.0f, 1.0f);
  std::vector<Color> instance(objects.size() + 2);
  for (auto& c : instance)
    for (auto& v : c) v = cfg.instance_jitter * unit(look);
  s.image = Grid<float>(h, w, 3);
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x) {
      const int cls = s.semantics(y, x);
      const int k = owner[static_cast<std::size_t>(y) * w + x];
      const auto& jitter = instance[k >= 0 ? k + 2 : cls];
      const float t = cfg.fog * static_cast<float>(s.depth(y, x) / spec.d_max);
      for (int c = 0; c < 3; ++c) {
        float v = cfg.palette[cls][c] + jitter[c] + cfg.texture_noise * unit(look);
        v = v + std::min(t, 1.0f) * (cfg.fog_color[c] - v);
        v = cfg.gain * v + cfg.bias;
        s.image(y, x, c) = std::round(std::clamp(v, 0.0f, 1.0f) * 255.0f) / 255.0f;
      }
    }

  if (cfg.depth_noise_std > 0.0f) {
    std::normal_distribution<float> nd(0.0f, cfg.depth_noise_std);
    const float lim = 3.0f * cfg.depth_noise_std;
    const float d_max = static_cast<float>(spec.d_max);
    for (auto& d : s.depth.data()) {
      const float e = std::clamp(nd(noise), -lim, lim);
      d = std::clamp(d + e, 1e-3f, d_max);
    }
  }
  return s;
}

/// Writes the train and eval samples of one domain plus its manifest under root.
inline DatasetManifest generate_synthetic_domain(const DomainShiftConfig& cfg, const GeneratorSpec& spec,
                                                 const fs::path& root) {
  if (spec.classes < 3) throw ConfigError("generator needs at least 3 classes (sky, ground, object)");
  if (spec.height < 32 || spec.width < 32) throw ConfigError("generator needs dims >= 32x32");
  if (spec.count <= 0 || spec.eval_count < 0) throw ConfigError("generator: sample count must be positive");
  if (!(spec.d_min > 0.0 && spec.d_min < spec.d_max)) throw ConfigError("generator: need 0 < d_min < d_max");
  cfg.validate(spec.classes);

  std::error_code ec;
  for (const char* sub : {"images", "labels", "depth"}) {
    fs::create_directories(root / sub, ec);
    if (ec) throw IoError("cannot create " + (root / sub).string() + ": " + ec.message());
  }

  DatasetManifest m;
  m.root = root;
  m.domain = spec.domain;
  m.classes = spec.classes;
  m.class_names = default_class_names(spec.classes);
  m.d_min = spec.d_min;
  m.d_max = spec.d_max;
  m.height = spec.height;
  m.width = spec.width;

  const int total = spec.count + spec.eval_count;
  for (int i = 0; i < total; ++i) {
    const Sample s = render_scene(cfg, spec, i);
    char name[32];
    std::snprintf(name, sizeof(name), "%06d.png", i);
    SampleRecord rec{std::string("images/") + name, std::string("labels/") + name,
                     std::string("depth/") + name, i < spec.count ? "train" : "eval"};

    Grid<std::uint8_t> rgb(s.height(), s.width(), 3);
    for (std::size_t k = 0; k < rgb.size(); ++k)
      rgb.data()[k] = static_cast<std::uint8_t>(std::lround(s.image.data()[k] * 255.0f));
    Grid<std::uint16_t> dep(s.height(), s.width());
    for (std::size_t k = 0; k < dep.size(); ++k) dep.data()[k] = encode_depth(s.depth.data()[k], spec.d_max);

    io::write_rgb8(root / rec.image, rgb);
    io::write_gray8(root / rec.semantics, s.semantics);
    io::write_gray16(root / rec.depth, dep);
    m.records.push_back(std::move(rec));
  }
  write_manifest(m);
  return m;
}

}  // namespace corda
