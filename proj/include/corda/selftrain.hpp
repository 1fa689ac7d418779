#pragma once

// Cross-domain self-training: confidence-thresholded pseudo-labels from the
// current network, ClassMix of source onto target, depth-difficulty
// re-weighting of the pseudo-labels and SGD with a poly learning rate.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <functional>
#include <limits>
#include <optional>
#include <random>
#include <sstream>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "corda/checkpoint.hpp"
#include "corda/datasets.hpp"
#include "corda/losses.hpp"
#include "corda/metrics.hpp"
#include "corda/model.hpp"
#include "corda/refinement.hpp"

namespace corda {

enum class Variant { kBaseline, kSimpleAux, kCordaF, kCordaFD };

inline const char* variant_name(Variant v) {
  switch (v) {
    case Variant::kBaseline: return "baseline";
    case Variant::kSimpleAux: return "simple_aux";
    case Variant::kCordaF: return "corda_f";
    case Variant::kCordaFD: return "corda_fd";
  }
  return "?";
}

inline std::optional<Variant> parse_variant(const std::string& s) {
  for (auto v : {Variant::kBaseline, Variant::kSimpleAux, Variant::kCordaF, Variant::kCordaFD})
    if (s == variant_name(v)) return v;
  return std::nullopt;
}

inline bool uses_depth(Variant v) { return v != Variant::kBaseline; }
inline bool uses_correlation(Variant v) { return v == Variant::kCordaF || v == Variant::kCordaFD; }
inline bool uses_refinement(Variant v) { return v == Variant::kCordaFD; }

struct TrainConfig {
  int iterations = 4000;
  int batch_size = 2;
  double base_lr = 2.5e-4;
  double poly_power = 0.9;
  double momentum = 0.9;
  double weight_decay = 5e-4;
  int crop_size = 64;
  double confidence_threshold = 0.968;
  LossWeights loss;
  std::uint64_t seed = 0;
  Variant variant = Variant::kCordaFD;

  void validate() const {
    if (iterations <= 0) throw ConfigError("iterations must be > 0");
    if (batch_size <= 0) throw ConfigError("batch_size must be > 0");
    if (!(confidence_threshold > 0.0 && confidence_threshold < 1.0))
      throw ConfigError("confidence_threshold must be in (0, 1)");
    if (!(base_lr > 0.0) || !(poly_power >= 0.0) || momentum < 0.0 || weight_decay < 0.0)
      throw ConfigError("invalid optimizer settings");
    if (crop_size <= 0) throw ConfigError("crop_size must be > 0");
    loss.validate();
  }
};

/// lr = base * (1 - iter / max_iter)^power, 0 past the end.
inline double poly_lr(long iter, double base, double power, long max_iter) {
  require(max_iter > 0 && iter >= 0, "poly_lr: need iter >= 0 and max_iter > 0");
  if (iter >= max_iter) return 0.0;
  return base * std::pow(1.0 - static_cast<double>(iter) / static_cast<double>(max_iter), power);
}

/// Per-pixel argmax labels and confidence flags, batch pixel order.
struct PseudoLabel {
  std::vector<std::uint8_t> labels;
  std::vector<std::uint8_t> confident;
  std::vector<float> max_prob;
};

inline PseudoLabel pseudo_labels_from_logits(const Tensor& logits, double threshold) {
  const std::size_t P = logits.channel_stride();
  const int C = logits.c();
  PseudoLabel pl{std::vector<std::uint8_t>(P), std::vector<std::uint8_t>(P), std::vector<float>(P)};
  const float* l = logits.raw();
  for (std::size_t p = 0; p < P; ++p) {
    int best = 0;
    for (int c = 1; c < C; ++c)
      if (l[c * P + p] > l[best * P + p]) best = c;
    const double mx = l[best * P + p];
    double z = 0.0;
    for (int c = 0; c < C; ++c) z += std::exp(static_cast<double>(l[c * P + p]) - mx);
    const double prob = 1.0 / z;
    pl.labels[p] = static_cast<std::uint8_t>(best);
    pl.max_prob[p] = static_cast<float>(prob);
    pl.confident[p] = prob >= threshold;
  }
  return pl;
}

/// Runs the network without recording a trace and labels each target pixel.
inline PseudoLabel generate_pseudo_labels(const Model& model, const Tensor& target_images, double threshold,
                                          ModelOutput* output = nullptr) {
  ModelOutput out = model.forward(target_images, Domain::kTarget);
  auto pl = pseudo_labels_from_logits(out.sem_final, threshold);
  if (output) *output = std::move(out);
  return pl;
}

struct MixedSample {
  Grid<float> image;
  std::vector<std::uint8_t> labels;
  std::vector<float> weights;
  std::vector<std::uint8_t> mask;  // 1 where source pixels were pasted
};

/// Pastes the source pixels whose label is in `classes` onto the target.
/// target_weights is the per-pixel weight of the pseudo-labels (confidence
/// indicator times difficulty weight); pasted pixels get weight 1.
inline MixedSample classmix_with_classes(const Sample& source, const Grid<float>& target_image,
                                         std::span<const std::uint8_t> pseudo_labels,
                                         std::span<const float> target_weights, std::span<const int> classes) {
  const int h = source.height(), w = source.width();
  require(target_image.same_dims(h, w) && target_image.channels() == 3, "classmix: dimension mismatch");
  const std::size_t P = static_cast<std::size_t>(h) * w;
  require(pseudo_labels.size() == P && target_weights.size() == P, "classmix: label/weight size mismatch");
  std::array<bool, 256> selected{};
  for (int c : classes) {
    require(c >= 0 && c < 256, "classmix: bad class id");
    selected[c] = true;
  }
  MixedSample m{target_image, std::vector<std::uint8_t>(pseudo_labels.begin(), pseudo_labels.end()),
                std::vector<float>(target_weights.begin(), target_weights.end()), std::vector<std::uint8_t>(P, 0)};
  for (std::size_t p = 0; p < P; ++p) {
    const auto y = source.semantics.data()[p];
    if (y == kIgnoreLabel || !selected[y]) continue;
    m.mask[p] = 1;
    m.labels[p] = y;
    m.weights[p] = 1.0f;
    for (int c = 0; c < 3; ++c) m.image.data()[p * 3 + c] = source.image.data()[p * 3 + c];
  }
  return m;
}

/// ceil(k / 2) of the k classes present in the label map, uniformly at random.
template <typename Rng>
std::vector<int> select_mix_classes(const Grid<std::uint8_t>& labels, Rng& rng) {
  std::array<bool, 256> present{};
  for (auto v : labels.data())
    if (v != kIgnoreLabel) present[v] = true;
  std::vector<int> classes;
  for (int c = 0; c < 256; ++c)
    if (present[c]) classes.push_back(c);
  const std::size_t keep = (classes.size() + 1) / 2;
  // Partial Fisher-Yates with an explicit draw so the choice does not depend
  // on the standard library's shuffle.
  for (std::size_t i = 0; i < keep; ++i) {
    std::uniform_int_distribution<std::size_t> pick(i, classes.size() - 1);
    std::swap(classes[i], classes[pick(rng)]);
  }
  classes.resize(keep);
  std::sort(classes.begin(), classes.end());
  return classes;
}

template <typename Rng>
MixedSample classmix(const Sample& source, const Grid<float>& target_image, std::span<const std::uint8_t> pseudo_labels,
                     std::span<const float> target_weights, Rng& rng) {
  const auto classes = select_mix_classes(source.semantics, rng);
  return classmix_with_classes(source, target_image, pseudo_labels, target_weights, classes);
}

/// Samples of one domain with their inverse-depth targets.
struct DomainData {
  std::vector<Sample> samples;
  double d_min = 1.0;
  double d_max = 80.0;
  int classes = 0;
  std::vector<std::string> class_names;
};

inline DomainData load_domain(const DatasetManifest& m, const std::string& split) {
  DomainData d{load_split(m, split), m.d_min, m.d_max, m.classes, m.class_names};
  if (d.samples.empty()) throw ConfigError("dataset " + m.root.string() + " has no '" + split + "' samples");
  return d;
}

struct StepReport {
  long iter = 0;
  double lr = 0.0;
  LossBreakdown loss;
  double mean_w = 1.0;          // mean difficulty weight over valid target pixels
  double confident_fraction = 0.0;
  std::optional<double> eval_miou;
};

/// Thrown when the total loss becomes non-finite.
struct TrainingDiverged : std::runtime_error {
  using std::runtime_error::runtime_error;
};

namespace detail {

inline Tensor images_to_tensor(const std::vector<const Grid<float>*>& images) {
  return stack_images(std::span<const Grid<float>* const>(images.data(), images.size()));
}

template <typename T, typename Fn>
std::vector<T> gather(std::size_t batch, std::size_t per, Fn&& fill) {
  std::vector<T> out(batch * per);
  for (std::size_t b = 0; b < batch; ++b) fill(b, std::span<T>(out.data() + b * per, per));
  return out;
}

}  // namespace detail

/// SGD with momentum and weight decay over every convolution of a model.
class SgdOptimizer {
 public:
  SgdOptimizer(Model& model, double momentum, double weight_decay)
      : momentum_(momentum), weight_decay_(weight_decay) {
    for (auto& [name, conv] : model.named_parameters())
      state_.push_back({name, FloatBuffer(conv->weight.size()), FloatBuffer(conv->bias.size())});
  }

  void step(Model& model, double lr) {
    auto params = model.named_parameters();
    for (std::size_t k = 0; k < params.size(); ++k) {
      auto& conv = *params[k].second;
      update(conv.weight, conv.grad_weight, state_[k].weight, lr);
      update(conv.bias, conv.grad_bias, state_[k].bias, lr);
    }
  }

  void save(Checkpoint& ck) const {
    for (const auto& s : state_) {
      ck.blocks["momentum/" + s.name + "/weight"] = s.weight;
      ck.blocks["momentum/" + s.name + "/bias"] = s.bias;
    }
  }

  void load(const Checkpoint& ck) {
    for (auto& s : state_) {
      auto w = ck.blocks.find("momentum/" + s.name + "/weight");
      auto b = ck.blocks.find("momentum/" + s.name + "/bias");
      if (w == ck.blocks.end() || b == ck.blocks.end()) throw FormatError("checkpoint lacks optimizer state");
      s.weight = w->second;
      s.bias = b->second;
    }
  }

 private:
  struct State {
    std::string name;
    FloatBuffer weight, bias;
  };

  void update(FloatBuffer& p, const FloatBuffer& g, FloatBuffer& v, double lr) const {
    const float mu = static_cast<float>(momentum_), wd = static_cast<float>(weight_decay_), a = static_cast<float>(lr);
    for (std::size_t i = 0; i < p.size(); ++i) {
      v[i] = mu * v[i] + g[i] + wd * p[i];
      p[i] -= a * v[i];
    }
  }

  double momentum_;
  double weight_decay_;
  std::vector<State> state_;
};

/// Owns the optimizer state, the sampling RNG and the iteration counter of a
/// training run. The model must have been built with use_correlation matching
/// the variant.
class Trainer {
 public:
  Trainer(Model& model, TrainConfig cfg)
      : model_(model), cfg_(std::move(cfg)), opt_(model, cfg_.momentum, cfg_.weight_decay), rng_(cfg_.seed) {
    cfg_.validate();
    require(model.config().use_correlation == uses_correlation(cfg_.variant),
            "Trainer: model correlation setting does not match the variant");
  }

  long iteration() const { return iter_; }
  const TrainConfig& config() const { return cfg_; }
  std::mt19937_64& rng() { return rng_; }

  /// Random crops of batch_size samples drawn uniformly from a domain.
  std::vector<Sample> sample_batch(const DomainData& d) {
    std::uniform_int_distribution<std::size_t> pick(0, d.samples.size() - 1);
    std::vector<Sample> batch;
    for (int b = 0; b < cfg_.batch_size; ++b) {
      const auto& s = d.samples[pick(rng_)];
      batch.push_back(random_crop_pair(s, cfg_.crop_size, rng_));
    }
    return batch;
  }

  /// One optimizer update from a source batch and a target batch of equal
  /// size and crop dims. Target semantics are never read.
  StepReport train_step(const std::vector<Sample>& batch_s, const std::vector<Sample>& batch_t,
                        const DomainData& src, const DomainData& tgt) {
    require(!batch_s.empty() && batch_s.size() == batch_t.size(), "train_step: batch sizes differ");
    const int B = static_cast<int>(batch_s.size());
    const int H = batch_s[0].height(), W = batch_s[0].width();
    const std::size_t P = static_cast<std::size_t>(H) * W;
    for (const auto* batch : {&batch_s, &batch_t})
      for (const auto& s : *batch) require(s.height() == H && s.width() == W, "train_step: crop dims differ");

    StepReport rep;
    rep.iter = iter_;
    rep.lr = poly_lr(iter_, cfg_.base_lr, cfg_.poly_power, cfg_.iterations);

    std::vector<const Grid<float>*> t_imgs, s_imgs;
    for (const auto& s : batch_t) t_imgs.push_back(&s.image);
    for (const auto& s : batch_s) s_imgs.push_back(&s.image);
    const Tensor target_images = detail::images_to_tensor(t_imgs);

    std::vector<InverseDepth> inv_s, inv_t;
    for (const auto& s : batch_s) inv_s.push_back(to_inverse_depth(s.depth, src.d_min, src.d_max));
    for (const auto& s : batch_t) inv_t.push_back(to_inverse_depth(s.depth, tgt.d_min, tgt.d_max));
    auto flat_f = [&](const std::vector<InverseDepth>& v) {
      return detail::gather<float>(B, P, [&](std::size_t b, std::span<float> o) {
        std::copy(v[b].value.data().begin(), v[b].value.data().end(), o.begin());
      });
    };
    auto flat_valid = [&](const std::vector<InverseDepth>& v) {
      return detail::gather<std::uint8_t>(B, P, [&](std::size_t b, std::span<std::uint8_t> o) {
        std::copy(v[b].valid.data().begin(), v[b].valid.data().end(), o.begin());
      });
    };
    const auto d_s = flat_f(inv_s), d_t = flat_f(inv_t);
    const auto v_s = flat_valid(inv_s), v_t = flat_valid(inv_t);

    // (1) pseudo-labels from the current network, no trace recorded.
    ModelOutput eval_out;
    const PseudoLabel pl = generate_pseudo_labels(model_, target_images, cfg_.confidence_threshold, &eval_out);

    // (2) difficulty weights from the two final depth decoders.
    std::vector<float> w(static_cast<std::size_t>(B) * P, 1.0f);
    if (uses_refinement(cfg_.variant)) {
      const auto both = model_.final_depth_both(eval_out.f_depth_o, H, W);
      const auto delta = depth_discrepancy(both[0].data(), both[1].data());
      const auto wm = difficulty_weights(delta, d_t, v_t);
      w = wm.w;
      rep.mean_w = wm.mean_valid();
    }
    std::size_t conf_count = 0;
    for (auto c : pl.confident) conf_count += c;
    rep.confident_fraction = static_cast<double>(conf_count) / static_cast<double>(pl.confident.size());

    // (3) ClassMix each source crop onto its paired target crop.
    std::vector<MixedSample> mixed;
    for (int b = 0; b < B; ++b) {
      std::vector<float> tw(P);
      for (std::size_t p = 0; p < P; ++p) {
        const std::size_t i = static_cast<std::size_t>(b) * P + p;
        tw[p] = pl.confident[i] ? w[i] : 0.0f;
      }
      std::span<const std::uint8_t> labels(pl.labels.data() + static_cast<std::size_t>(b) * P, P);
      mixed.push_back(classmix(batch_s[b], batch_t[b].image, labels, tw, rng_));
    }
    std::vector<const Grid<float>*> m_imgs;
    for (const auto& m : mixed) m_imgs.push_back(&m.image);
    const auto mix_labels = detail::gather<std::uint8_t>(B, P, [&](std::size_t b, std::span<std::uint8_t> o) {
      std::copy(mixed[b].labels.begin(), mixed[b].labels.end(), o.begin());
    });
    const auto mix_weights = detail::gather<float>(B, P, [&](std::size_t b, std::span<float> o) {
      std::copy(mixed[b].weights.begin(), mixed[b].weights.end(), o.begin());
    });
    const auto y_s = detail::gather<std::uint8_t>(B, P, [&](std::size_t b, std::span<std::uint8_t> o) {
      std::copy(batch_s[b].semantics.data().begin(), batch_s[b].semantics.data().end(), o.begin());
    });

    // (4) traced forwards: source, mixed (semantics), unmixed target (depth).
    const bool depth = uses_depth(cfg_.variant);
    ForwardTrace tr_s, tr_m, tr_t;
    const ModelOutput out_s = model_.forward(detail::images_to_tensor(s_imgs), Domain::kSource, &tr_s);
    const ModelOutput out_m = model_.forward(detail::images_to_tensor(m_imgs), Domain::kTarget, &tr_m);
    ModelOutput out_t;
    if (depth) out_t = model_.forward(target_images, Domain::kTarget, &tr_t);

    // (5) loss terms active for the variant.
    LossPass ps{&out_s, SegTargets{y_s, {}}, {}};
    if (depth) ps.depth = DepthTargets{d_s, v_s};
    LossPass pm{&out_m, SegTargets{mix_labels, mix_weights}, {}};
    LossPass pt{depth ? &out_t : nullptr, {}, {}};
    if (depth) pt.depth = DepthTargets{d_t, v_t};
    LossResult lr = total_loss(ps, pm, pt, cfg_.loss, true);
    rep.loss = lr.breakdown;
    if (!std::isfinite(rep.loss.total)) {
      std::ostringstream os;
      os << "non-finite loss at iteration " << iter_ << ":";
      const auto terms = rep.loss.terms();
      for (std::size_t k = 0; k < terms.size(); ++k) os << ' ' << LossBreakdown::kTermNames[k] << '=' << terms[k];
      throw TrainingDiverged(os.str());
    }

    // (6) gradient step.
    model_.zero_grad();
    model_.backward(tr_s, lr.source);
    model_.backward(tr_m, lr.target_seg);
    if (depth) model_.backward(tr_t, lr.target_depth);
    opt_.step(model_, rep.lr);
    ++iter_;
    return rep;
  }

  StepReport step(const DomainData& src, const DomainData& tgt) {
    auto bs = sample_batch(src);
    auto bt = sample_batch(tgt);
    return train_step(bs, bt, src, tgt);
  }

  Checkpoint checkpoint() const {
    std::ostringstream rng_state;
    rng_state << rng_;
    Checkpoint ck = snapshot(model_, {{"iteration", iter_}, {"variant", variant_name(cfg_.variant)},
                                      {"rng", rng_state.str()}});
    opt_.save(ck);
    return ck;
  }

  /// Restores iteration count, optimizer and RNG state; the model weights
  /// must already have been restored into the model this trainer wraps.
  void resume(const Checkpoint& ck) {
    iter_ = ck.meta.at("iteration").get<long>();
    opt_.load(ck);
    std::istringstream rng_state(ck.meta.at("rng").get<std::string>());
    rng_state >> rng_;
  }

 private:
  Model& model_;
  TrainConfig cfg_;
  SgdOptimizer opt_;
  std::mt19937_64 rng_;
  long iter_ = 0;
};

/// Classes used for the subset mean: all classes except those named in
/// `excluded` (the toy benchmark drops its thin pole-like class).
inline std::vector<int> subset_excluding(const std::vector<std::string>& names, const std::vector<std::string>& excluded) {
  std::vector<int> ids;
  for (int k = 0; k < static_cast<int>(names.size()); ++k)
    if (std::find(excluded.begin(), excluded.end(), names[k]) == excluded.end()) ids.push_back(k);
  return ids;
}

/// Confusion matrix of final semantic predictions (argmax of the upsampled
/// logits) on full-resolution samples evaluated through the target path.
inline ConfusionMatrix evaluate_confusion(const Model& model, const std::vector<Sample>& samples, int batch = 10) {
  ConfusionMatrix conf(model.classes());
  for (std::size_t start = 0; start < samples.size(); start += batch) {
    const std::size_t end = std::min(samples.size(), start + batch);
    std::vector<const Grid<float>*> imgs;
    for (std::size_t i = start; i < end; ++i) imgs.push_back(&samples[i].image);
    const ModelOutput out = model.forward(detail::images_to_tensor(imgs), Domain::kTarget);
    const auto pl = pseudo_labels_from_logits(out.sem_final, 1.0 - 1e-9);
    const std::size_t P = samples[start].semantics.size();
    for (std::size_t i = start; i < end; ++i) {
      std::span<const std::uint8_t> pred(pl.labels.data() + (i - start) * P, P);
      conf.update(pred, samples[i].semantics.data());
    }
  }
  return conf;
}

inline EvalReport evaluate(const Model& model, const DomainData& eval_data,
                           const std::vector<std::string>& subset_excluded = {"pole"}) {
  const auto conf = evaluate_confusion(model, eval_data.samples);
  return make_report(conf, eval_data.class_names, subset_excluding(eval_data.class_names, subset_excluded));
}

// ---------------------------------------------------------------------------
// Training log

inline std::string csv_header() {
  std::string h = "iter,lr";
  for (auto* n : LossBreakdown::kTermNames) h += std::string(",") + n;
  return h + ",total,mean_w,eval_miou";
}

inline std::string csv_row(const StepReport& r) {
  std::ostringstream os;
  os.precision(9);
  os << r.iter << ',' << r.lr;
  for (double v : r.loss.terms()) os << ',' << v;
  os << ',' << r.loss.total << ',' << r.mean_w << ',';
  if (r.eval_miou) os << *r.eval_miou;
  return os.str();
}

struct TrainRun {
  TrainConfig train;
  ModelConfig model;
  std::filesystem::path output_dir;
  int eval_interval = 0;  // 0 = evaluate only at the end
  std::optional<std::filesystem::path> resume_from;
  std::function<void(const StepReport&)> on_step;
};

struct TrainOutcome {
  EvalReport final_eval;
  long iterations_run = 0;
  std::filesystem::path checkpoint;
  std::filesystem::path log;
  std::filesystem::path report;
};

/// Full training run: writes checkpoint.bin, train_log.csv and
/// eval_report.json under the output directory.
inline TrainOutcome train(const TrainRun& run, const DatasetManifest& source, const DatasetManifest& target) {
  run.train.validate();
  if (source.classes != target.classes) throw ConfigError("source and target class counts differ");
  ModelConfig mcfg = run.model;
  mcfg.classes = source.classes;
  mcfg.use_correlation = uses_correlation(run.train.variant);

  const DomainData src = load_domain(source, "train");
  const DomainData tgt = load_domain(target, "train");
  const DomainData tgt_eval = load_domain(target, "eval");

  std::filesystem::create_directories(run.output_dir);
  Model model(mcfg);
  std::optional<Checkpoint> resume;
  if (run.resume_from) {
    resume = load_checkpoint(*run.resume_from);
    model = restore_model(*resume);
    mcfg = model.config();
  }
  Trainer trainer(model, run.train);
  if (resume) trainer.resume(*resume);

  TrainOutcome outcome;
  outcome.log = run.output_dir / "train_log.csv";
  outcome.checkpoint = run.output_dir / "checkpoint.bin";
  outcome.report = run.output_dir / "eval_report.json";
  std::ofstream log(outcome.log, resume ? std::ios::app : std::ios::trunc);
  if (!log) throw IoError("cannot write " + outcome.log.string());
  if (!resume) log << csv_header() << '\n';

  while (trainer.iteration() < run.train.iterations) {
    StepReport rep = trainer.step(src, tgt);
    const long done = trainer.iteration();
    if (done == run.train.iterations || (run.eval_interval > 0 && done % run.eval_interval == 0))
      rep.eval_miou = evaluate(model, tgt_eval).miou;
    log << csv_row(rep) << '\n';
    ++outcome.iterations_run;
    if (run.on_step) run.on_step(rep);
  }
  log.flush();

  save_checkpoint(outcome.checkpoint, trainer.checkpoint());
  outcome.final_eval = evaluate(model, tgt_eval);
  std::ofstream(outcome.report) << report_to_json(outcome.final_eval).dump(2) << '\n';
  return outcome;
}

}  // namespace corda
