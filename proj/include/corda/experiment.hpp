#pragma once

// Experiment configuration (strict JSON), domain-shift presets for the
// synthetic benchmark, and the bodies of the command-line subcommands.

#include <cstdint>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <set>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "corda/checkpoint.hpp"
#include "corda/datasets.hpp"
#include "corda/metrics.hpp"
#include "corda/refinement.hpp"
#include "corda/selftrain.hpp"

namespace corda {

namespace fs = std::filesystem;

enum ExitCode : int { kExitOk = 0, kExitFailure = 1, kExitUsage = 2 };

struct ExperimentConfig {
  fs::path source;
  fs::path target;
  fs::path output_dir = "runs/default";
  int eval_interval = 0;
  ModelConfig model;
  TrainConfig train;
};

namespace detail {

inline void reject_unknown(const nlohmann::json& j, const std::set<std::string>& allowed, const std::string& where) {
  if (!j.is_object()) throw ConfigError(where + ": expected an object");
  for (const auto& [key, value] : j.items())
    if (!allowed.count(key)) throw ConfigError(where + ": unknown key '" + key + "'");
}

template <typename T>
void read_opt(const nlohmann::json& j, const char* key, T& dst, const std::string& where) {
  if (!j.contains(key)) return;
  try {
    dst = j.at(key).get<T>();
  } catch (const nlohmann::json::exception&) {
    throw ConfigError(where + "." + key + ": wrong type");
  }
}

}  // namespace detail

/// Parses and validates an experiment config. Unknown keys at any level and
/// values of the wrong type are errors.
inline ExperimentConfig parse_experiment(const nlohmann::json& j) {
  using detail::read_opt;
  detail::reject_unknown(j, {"source", "target", "output_dir", "eval_interval", "model", "train"}, "config");
  ExperimentConfig c;
  std::string s;
  if (!j.contains("source") || !j.contains("target")) throw ConfigError("config: 'source' and 'target' are required");
  read_opt(j, "source", s, "config");
  c.source = s;
  read_opt(j, "target", s, "config");
  c.target = s;
  if (j.contains("output_dir")) {
    read_opt(j, "output_dir", s, "config");
    c.output_dir = s;
  }
  read_opt(j, "eval_interval", c.eval_interval, "config");
  if (c.eval_interval < 0) throw ConfigError("config.eval_interval must be >= 0");

  if (j.contains("model")) {
    const auto& m = j.at("model");
    detail::reject_unknown(m, {"backbone_widths", "backbone_strides", "features", "decoder_width", "tie_depth_init", "seed"},
                           "config.model");
    read_opt(m, "backbone_widths", c.model.backbone_widths, "config.model");
    read_opt(m, "backbone_strides", c.model.backbone_strides, "config.model");
    read_opt(m, "features", c.model.features, "config.model");
    read_opt(m, "decoder_width", c.model.decoder_width, "config.model");
    read_opt(m, "tie_depth_init", c.model.tie_depth_init, "config.model");
    read_opt(m, "seed", c.model.seed, "config.model");
  }
  if (j.contains("train")) {
    const auto& t = j.at("train");
    detail::reject_unknown(t,
                           {"iterations", "batch_size", "base_lr", "poly_power", "momentum", "weight_decay", "crop_size",
                            "confidence_threshold", "alpha_source", "alpha_target", "berhu_c_fraction", "seed",
                            "variant"},
                           "config.train");
    read_opt(t, "iterations", c.train.iterations, "config.train");
    read_opt(t, "batch_size", c.train.batch_size, "config.train");
    read_opt(t, "base_lr", c.train.base_lr, "config.train");
    read_opt(t, "poly_power", c.train.poly_power, "config.train");
    read_opt(t, "momentum", c.train.momentum, "config.train");
    read_opt(t, "weight_decay", c.train.weight_decay, "config.train");
    read_opt(t, "crop_size", c.train.crop_size, "config.train");
    read_opt(t, "confidence_threshold", c.train.confidence_threshold, "config.train");
    read_opt(t, "alpha_source", c.train.loss.alpha_source, "config.train");
    read_opt(t, "alpha_target", c.train.loss.alpha_target, "config.train");
    read_opt(t, "berhu_c_fraction", c.train.loss.berhu_c_fraction, "config.train");
    read_opt(t, "seed", c.train.seed, "config.train");
    if (t.contains("variant")) {
      std::string v;
      read_opt(t, "variant", v, "config.train");
      auto parsed = parse_variant(v);
      if (!parsed) throw ConfigError("config.train.variant: unknown variant '" + v + "'");
      c.train.variant = *parsed;
    }
  }
  c.model.validate();
  c.train.validate();
  return c;
}

inline ExperimentConfig load_experiment(const fs::path& path) {
  std::ifstream f(path);
  if (!f) throw ConfigError("cannot read config " + path.string());
  nlohmann::json j;
  try {
    f >> j;
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(std::string("config is not valid JSON: ") + e.what());
  }
  return parse_experiment(j);
}

inline nlohmann::json experiment_to_json(const ExperimentConfig& c) {
  const auto& t = c.train;
  return {{"source", c.source.string()},
          {"target", c.target.string()},
          {"output_dir", c.output_dir.string()},
          {"eval_interval", c.eval_interval},
          {"model",
           {{"backbone_widths", c.model.backbone_widths},
            {"backbone_strides", c.model.backbone_strides},
            {"features", c.model.features},
            {"decoder_width", c.model.decoder_width},
            {"tie_depth_init", c.model.tie_depth_init},
            {"seed", c.model.seed}}},
          {"train",
           {{"iterations", t.iterations},
            {"batch_size", t.batch_size},
            {"base_lr", t.base_lr},
            {"poly_power", t.poly_power},
            {"momentum", t.momentum},
            {"weight_decay", t.weight_decay},
            {"crop_size", t.crop_size},
            {"confidence_threshold", t.confidence_threshold},
            {"alpha_source", t.loss.alpha_source},
            {"alpha_target", t.loss.alpha_target},
            {"berhu_c_fraction", t.loss.berhu_c_fraction},
            {"seed", t.seed},
            {"variant", variant_name(t.variant)}}}};
}

// ---------------------------------------------------------------------------
// Domain-shift presets

struct ShiftPreset {
  DomainShiftConfig source;
  DomainShiftConfig target;
};

inline std::vector<std::string> preset_names() { return {"default", "mild", "none"}; }

/// Palettes cycle for classes beyond the five named roles.
inline std::vector<Color> extend_palette(std::vector<Color> base, int classes) {
  const std::size_t n = base.size();
  for (int c = static_cast<int>(n); c < classes; ++c) {
    Color col = base[2 + (c - 2) % (n - 2)];
    for (auto& v : col) v = std::clamp(v * 0.8f + 0.1f, 0.0f, 1.0f);
    base.push_back(col);
  }
  return base;
}

inline std::optional<ShiftPreset> shift_preset(const std::string& name, int classes, std::uint64_t seed) {
  // sky, ground, box, ball, pole
  const std::vector<Color> src_palette{
      {0.55f, 0.70f, 0.90f}, {0.45f, 0.42f, 0.38f}, {0.80f, 0.30f, 0.25f}, {0.30f, 0.65f, 0.30f}, {0.85f, 0.80f, 0.30f}};
  ShiftPreset p;
  p.source.palette = extend_palette(src_palette, classes);
  p.source.texture_noise = 0.06f;
  p.source.instance_jitter = 0.06f;
  p.source.fog = 0.3f;
  p.source.depth_noise_std = 0.05f;
  p.source.min_objects = 2;
  p.source.max_objects = 5;
  p.source.seed = seed;
  p.target = p.source;
  p.target.seed = seed + 0x9e3779b97f4a7c15ULL;

  if (name == "none") return p;
  if (name == "mild") {
    p.target.gain = 0.85f;
    p.target.bias = 0.05f;
    p.target.texture_noise = 0.10f;
    return p;
  }
  if (name == "default") {
    // Hazy afternoon: every object colour moves halfway toward a desaturated
    // version of itself, with a darker, noisier exposure on top.
    const std::vector<Color> tgt_palette{{0.615f, 0.70f, 0.82f},
                                         {0.475f, 0.445f, 0.40f},
                                         {0.71f, 0.37f, 0.315f},
                                         {0.37f, 0.595f, 0.35f},
                                         {0.745f, 0.70f, 0.36f}};
    p.target.palette = extend_palette(tgt_palette, classes);
    p.target.texture_noise = 0.12f;
    p.target.instance_jitter = 0.08f;
    p.target.gain = 0.85f;
    p.target.bias = 0.06f;
    p.target.fog = 0.4f;
    p.target.depth_noise_std = 0.2f;
    return p;
  }
  if (name == "overcast") {
    const std::vector<Color> tgt_palette{
        {0.68f, 0.70f, 0.74f}, {0.50f, 0.47f, 0.42f}, {0.62f, 0.44f, 0.38f}, {0.44f, 0.54f, 0.40f}, {0.64f, 0.60f, 0.42f}};
    p.target.palette = extend_palette(tgt_palette, classes);
    p.target.texture_noise = 0.14f;
    p.target.instance_jitter = 0.10f;
    p.target.gain = 0.8f;
    p.target.bias = 0.08f;
    p.target.fog = 0.5f;
    p.target.depth_noise_std = 0.2f;
    return p;
  }
  return std::nullopt;
}

// ---------------------------------------------------------------------------
// Subcommands

struct GenDataArgs {
  std::string preset = "default";
  fs::path out;
  std::uint64_t seed = 0;
  int classes = 5;
  int count = 200;
  int eval_count = 50;
  int size = 64;
};

inline int cmd_gen_data(const GenDataArgs& a, std::ostream& log = std::cout, std::ostream& err = std::cerr) {
  const auto preset = shift_preset(a.preset, std::max(a.classes, 3), a.seed);
  if (!preset) {
    err << "unknown preset '" << a.preset << "'\n";
    return kExitUsage;
  }
  if (a.classes < 3) {
    err << "--classes must be at least 3 (sky, ground, object)\n";
    return kExitUsage;
  }
  try {
    for (auto dom : {Domain::kSource, Domain::kTarget}) {
      GeneratorSpec spec;
      spec.count = a.count;
      spec.eval_count = a.eval_count;
      spec.height = spec.width = a.size;
      spec.classes = a.classes;
      spec.domain = dom;
      const auto& cfg = dom == Domain::kSource ? preset->source : preset->target;
      auto m = generate_synthetic_domain(cfg, spec, a.out / domain_name(dom));
      log << "wrote " << m.records.size() << " " << domain_name(dom) << " samples to " << m.root.string() << '\n';
    }
  } catch (const ConfigError& e) {
    err << e.what() << '\n';
    return kExitUsage;
  } catch (const std::exception& e) {
    err << e.what() << '\n';
    return kExitFailure;
  }
  return kExitOk;
}

struct TrainOverrides {
  std::optional<std::string> variant;
  std::optional<int> iterations;
  std::optional<std::uint64_t> seed;
  std::optional<fs::path> output_dir;
  std::optional<int> eval_interval;
  std::optional<fs::path> resume;
};

inline int cmd_train(const fs::path& config_path, const TrainOverrides& o, std::ostream& log = std::cout,
                     std::ostream& err = std::cerr) {
  ExperimentConfig cfg;
  try {
    cfg = load_experiment(config_path);
    if (o.variant) {
      auto v = parse_variant(*o.variant);
      if (!v) throw ConfigError("unknown variant '" + *o.variant + "'");
      cfg.train.variant = *v;
    }
    if (o.iterations) cfg.train.iterations = *o.iterations;
    if (o.seed) {
      cfg.train.seed = *o.seed;
      cfg.model.seed = *o.seed;
    }
    if (o.output_dir) cfg.output_dir = *o.output_dir;
    if (o.eval_interval) cfg.eval_interval = *o.eval_interval;
    cfg.train.validate();
  } catch (const std::exception& e) {
    err << "invalid config: " << e.what() << '\n';
    return kExitUsage;
  }

  try {
    const auto src = read_manifest(cfg.source);
    const auto tgt = read_manifest(cfg.target);
    fs::create_directories(cfg.output_dir);
    std::ofstream(cfg.output_dir / "config.json") << experiment_to_json(cfg).dump(2) << '\n';
    TrainRun run{cfg.train, cfg.model, cfg.output_dir, cfg.eval_interval, o.resume, {}};
    const auto outcome = train(run, src, tgt);
    log << "variant " << variant_name(cfg.train.variant) << ", " << outcome.iterations_run << " iterations\n";
    print_report_table(log, outcome.final_eval);
    return kExitOk;
  } catch (const TrainingDiverged& e) {
    err << e.what() << '\n';
    return kExitFailure;
  } catch (const ConfigError& e) {
    err << "invalid config: " << e.what() << '\n';
    return kExitUsage;
  } catch (const std::exception& e) {
    err << e.what() << '\n';
    return kExitFailure;
  }
}

struct EvalArgs {
  fs::path checkpoint;
  fs::path target;
  std::string split = "eval";
  fs::path out;  // JSON report path
};

inline int cmd_eval(const EvalArgs& a, std::ostream& log = std::cout, std::ostream& err = std::cerr) {
  try {
    const Model model = restore_model(load_checkpoint(a.checkpoint));
    const auto m = read_manifest(a.target);
    if (m.classes != model.classes()) throw ConfigError("checkpoint and dataset class counts differ");
    const auto report = evaluate(model, load_domain(m, a.split));
    print_report_table(log, report);
    if (!a.out.empty()) {
      if (a.out.has_parent_path()) fs::create_directories(a.out.parent_path());
      std::ofstream f(a.out);
      if (!f) throw IoError("cannot write " + a.out.string());
      f << report_to_json(report).dump(2) << '\n';
    }
    return kExitOk;
  } catch (const ConfigError& e) {
    err << e.what() << '\n';
    return kExitUsage;
  } catch (const std::exception& e) {
    err << e.what() << '\n';
    return kExitFailure;
  }
}

struct InspectArgs {
  fs::path checkpoint;
  fs::path target;
  std::string split = "train";
  fs::path out;
  int limit = 0;  // 0 = every sample of the split
};

/// Weight map of one full-resolution target sample.
inline WeightMap sample_weight_map(const Model& model, const Sample& s, double d_min, double d_max) {
  const Grid<float>* img = &s.image;
  const Tensor x = stack_images(std::span<const Grid<float>* const>(&img, 1));
  const ModelOutput out = model.forward(x, Domain::kTarget);
  const auto both = model.final_depth_both(out.f_depth_o, s.height(), s.width());
  const auto inv = to_inverse_depth(s.depth, d_min, d_max);
  return difficulty_weights(depth_discrepancy(both[0].data(), both[1].data()), inv.value.data(), inv.valid.data());
}

inline Grid<std::uint8_t> weight_heatmap(const WeightMap& w, int height, int width) {
  Grid<std::uint8_t> g(height, width);
  for (std::size_t i = 0; i < g.size(); ++i)
    g.data()[i] = static_cast<std::uint8_t>(std::lround(255.0f * std::clamp(w.w[i], 0.0f, 1.0f)));
  return g;
}

inline int cmd_inspect_weights(const InspectArgs& a, std::ostream& log = std::cout, std::ostream& err = std::cerr) {
  try {
    const Model model = restore_model(load_checkpoint(a.checkpoint));
    const auto m = read_manifest(a.target);
    auto ids = m.split_indices(a.split);
    if (ids.empty()) throw ConfigError("no samples in split '" + a.split + "'");
    if (a.limit > 0 && static_cast<int>(ids.size()) > a.limit) ids.resize(a.limit);
    fs::create_directories(a.out / "weights");

    nlohmann::json per = nlohmann::json::array();
    double total = 0.0;
    for (int id : ids) {
      const Sample s = load_sample(m, id);
      const auto wm = sample_weight_map(model, s, m.d_min, m.d_max);
      char name[32];
      std::snprintf(name, sizeof(name), "%06d.png", id);
      io::write_gray8(a.out / "weights" / name, weight_heatmap(wm, s.height(), s.width()));
      per.push_back({{"index", id}, {"file", std::string("weights/") + name}, {"mean_w", wm.mean()},
                     {"zero_fraction", wm.zero_fraction()}});
      total += wm.mean();
    }
    const double mean_w = total / static_cast<double>(ids.size());
    std::ofstream(a.out / "weights_stats.json")
        << nlohmann::json{{"mean_w", mean_w}, {"samples", per}}.dump(2) << '\n';
    log << "wrote " << ids.size() << " weight maps, mean w = " << mean_w << '\n';
    return kExitOk;
  } catch (const ConfigError& e) {
    err << e.what() << '\n';
    return kExitUsage;
  } catch (const std::exception& e) {
    err << e.what() << '\n';
    return kExitFailure;
  }
}

}  // namespace corda
