#pragma once

// Loss terms of the dual-task objective: reverse Huber (berHu) on inverse
// depth, pixel-weighted cross entropy on semantics, and their weighted sum
// over intermediate and final predictions of both domains.

#include <array>
#include <cmath>
#include <cstdint>
#include <limits>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "corda/model.hpp"
#include "corda/tensor.hpp"

namespace corda {

struct LossWeights {
  double alpha_source = 0.01;
  double alpha_target = 0.001;
  double berhu_c_fraction = 0.2;

  void validate() const {
    if (!(alpha_source >= 0.0) || !(alpha_target >= 0.0)) throw ConfigError("loss weights must be >= 0");
    if (!(berhu_c_fraction > 0.0 && berhu_c_fraction <= 1.0))
      throw ConfigError("berhu_c_fraction must be in (0, 1]");
  }
};

template <typename T>
T berhu_pointwise(T e, T c) {
  const T a = std::abs(e);
  return a <= c ? a : (e * e + c * c) / (T(2) * c);
}

/// Derivative in e for a fixed threshold c (0 at e = 0).
template <typename T>
T berhu_pointwise_grad(T e, T c) {
  if (std::abs(e) <= c) return e > T(0) ? T(1) : (e < T(0) ? T(-1) : T(0));
  return e / c;
}

struct BerhuResult {
  double loss = 0.0;
  double c = 0.0;
  std::size_t valid = 0;
  bool empty = false;  // no valid pixel: loss is 0 and no gradient
};

/// Mean berHu over valid pixels. The threshold is c_fraction times the
/// largest absolute error over the valid pixels unless fixed_c is given; it
/// is treated as a constant for the gradient, which (if grad is non-empty)
/// receives d loss / d pred.
template <typename T>
BerhuResult berhu(std::span<const T> pred, std::span<const T> target, std::span<const std::uint8_t> valid,
                  double c_fraction = 0.2, std::span<T> grad = {}, std::optional<double> fixed_c = {}) {
  require(pred.size() == target.size(), "berhu: pred/target size mismatch");
  require(valid.empty() || valid.size() == pred.size(), "berhu: mask size mismatch");
  require(grad.empty() || grad.size() == pred.size(), "berhu: grad size mismatch");
  auto is_valid = [&](std::size_t i) { return valid.empty() || valid[i] != 0; };

  BerhuResult r;
  double max_err = 0.0;
  for (std::size_t i = 0; i < pred.size(); ++i) {
    if (!is_valid(i)) continue;
    const double e = static_cast<double>(pred[i]) - static_cast<double>(target[i]);
    require(!std::isnan(e), "berhu: NaN input");
    max_err = std::max(max_err, std::abs(e));
    ++r.valid;
  }
  for (auto& g : grad) g = T(0);
  if (r.valid == 0) {
    r.empty = true;
    return r;
  }
  r.c = fixed_c ? *fixed_c : c_fraction * max_err;
  const double inv_n = 1.0 / static_cast<double>(r.valid);
  double sum = 0.0;
  for (std::size_t i = 0; i < pred.size(); ++i) {
    if (!is_valid(i)) continue;
    const double e = static_cast<double>(pred[i]) - static_cast<double>(target[i]);
    sum += berhu_pointwise(e, r.c);
    if (!grad.empty()) grad[i] = static_cast<T>(berhu_pointwise_grad(e, r.c) * inv_n);
  }
  r.loss = sum * inv_n;
  return r;
}

struct CrossEntropyResult {
  double loss = 0.0;
  std::size_t counted = 0;  // non-ignored pixels (the normalizer)
};

/// Weighted cross entropy over P pixels. logits are class-major
/// (logits[c * P + p]); weights may be empty (all ones). The sum of
/// w * -log softmax[label] is divided by the number of non-ignored pixels.
template <typename T>
CrossEntropyResult weighted_cross_entropy(std::span<const T> logits, int classes,
                                          std::span<const std::uint8_t> labels, std::span<const T> weights,
                                          int ignore_index = kIgnoreLabel, std::span<T> grad = {}) {
  require(classes > 0, "cross entropy: classes must be > 0");
  const std::size_t P = labels.size();
  require(logits.size() == P * static_cast<std::size_t>(classes), "cross entropy: logits/labels size mismatch");
  require(weights.empty() || weights.size() == P, "cross entropy: weight size mismatch");
  require(grad.empty() || grad.size() == logits.size(), "cross entropy: grad size mismatch");
  for (auto& g : grad) g = T(0);

  CrossEntropyResult r;
  for (std::size_t p = 0; p < P; ++p) {
    if (labels[p] == ignore_index) continue;
    require(labels[p] < classes, "cross entropy: label " + std::to_string(labels[p]) + " out of range");
    ++r.counted;
  }
  if (r.counted == 0) return r;
  const double inv_n = 1.0 / static_cast<double>(r.counted);

  double sum = 0.0;
  for (std::size_t p = 0; p < P; ++p) {
    const int y = labels[p];
    if (y == ignore_index) continue;
    const double w = weights.empty() ? 1.0 : static_cast<double>(weights[p]);
    double mx = -std::numeric_limits<double>::infinity();
    for (int c = 0; c < classes; ++c) mx = std::max(mx, static_cast<double>(logits[c * P + p]));
    double z = 0.0;
    for (int c = 0; c < classes; ++c) z += std::exp(static_cast<double>(logits[c * P + p]) - mx);
    const double lse = mx + std::log(z);
    sum += w * (lse - static_cast<double>(logits[y * P + p]));
    if (!grad.empty() && w != 0.0) {
      for (int c = 0; c < classes; ++c) {
        const double prob = std::exp(static_cast<double>(logits[c * P + p]) - lse);
        grad[c * P + p] = static_cast<T>(w * (prob - (c == y ? 1.0 : 0.0)) * inv_n);
      }
    }
  }
  r.loss = sum * inv_n;
  return r;
}

struct LossBreakdown {
  double seg_init_S = 0, seg_init_T = 0, depth_init_S = 0, depth_init_T = 0;
  double seg_final_S = 0, seg_final_T = 0, depth_final_S = 0, depth_final_T = 0;
  double total = 0;

  static constexpr std::array<const char*, 8> kTermNames{"seg_init_S",  "seg_init_T",  "depth_init_S",
                                                         "depth_init_T", "seg_final_S", "seg_final_T",
                                                         "depth_final_S", "depth_final_T"};

  std::array<double, 8> terms() const {
    return {seg_init_S, seg_init_T, depth_init_S, depth_init_T,
            seg_final_S, seg_final_T, depth_final_S, depth_final_T};
  }

  /// Weighted sum of the eight terms under the given depth weights.
  double recombine(const LossWeights& w) const {
    return seg_init_S + seg_init_T + seg_final_S + seg_final_T +
           w.alpha_source * (depth_init_S + depth_final_S) + w.alpha_target * (depth_init_T + depth_final_T);
  }
};

/// Semantic supervision for one batch: labels in batch pixel order
/// (n * H * W + y * W + x) and optional per-pixel weights.
struct SegTargets {
  std::span<const std::uint8_t> labels;
  std::span<const float> weights;
};

/// Inverse-depth supervision in [0, 1] with its validity mask.
struct DepthTargets {
  std::span<const float> inv_depth;
  std::span<const std::uint8_t> valid;
};

/// One forward pass and what it is supervised with. Absent targets leave the
/// corresponding terms at zero.
struct LossPass {
  const ModelOutput* output = nullptr;
  std::optional<SegTargets> seg;
  std::optional<DepthTargets> depth;
};

struct LossResult {
  LossBreakdown breakdown;
  OutputGrads source;
  OutputGrads target_seg;
  OutputGrads target_depth;
  bool depth_empty = false;  // some depth term had no valid pixel
};

namespace detail {

inline double seg_term(const Tensor& logits, const SegTargets& t, double scale, Tensor* grad) {
  require(t.labels.size() == logits.channel_stride(), "segmentation targets do not match prediction size");
  std::span<float> g;
  if (grad) {
    *grad = Tensor(logits.n(), logits.c(), logits.h(), logits.w());
    g = grad->data();
  }
  auto r = weighted_cross_entropy<float>(logits.data(), logits.c(), t.labels, t.weights, kIgnoreLabel, g);
  if (grad && scale != 1.0)
    for (auto& v : g) v = static_cast<float>(v * scale);
  return r.loss;
}

inline double depth_term(const Tensor& pred, const DepthTargets& t, double c_fraction, double scale, Tensor* grad,
                         bool& empty) {
  require(pred.c() == 1 && t.inv_depth.size() == pred.size(), "depth targets do not match prediction size");
  std::span<float> g;
  if (grad) {
    *grad = Tensor(pred.n(), 1, pred.h(), pred.w());
    g = grad->data();
  }
  auto r = berhu<float>(pred.data(), t.inv_depth, t.valid, c_fraction, g);
  empty = empty || r.empty;
  if (grad)
    for (auto& v : g) v = static_cast<float>(v * scale);
  return r.loss;
}

}  // namespace detail

/// Assembles the eight loss terms. Source pass: seg + depth with alpha_S.
/// Target semantic pass: weighted pseudo-label seg. Target depth pass: depth
/// with alpha_T. Gradients with respect to each pass's predictions are filled
/// when want_grads is set and already include the alpha weights.
inline LossResult total_loss(const LossPass& source, const LossPass& target_seg, const LossPass& target_depth,
                             const LossWeights& weights, bool want_grads = false) {
  weights.validate();
  LossResult r;
  auto& b = r.breakdown;
  auto grad = [&](Tensor& t) { return want_grads ? &t : nullptr; };

  if (source.output && source.seg) {
    b.seg_init_S = detail::seg_term(source.output->sem_init, *source.seg, 1.0, grad(r.source.sem_init));
    b.seg_final_S = detail::seg_term(source.output->sem_final, *source.seg, 1.0, grad(r.source.sem_final));
  }
  if (source.output && source.depth) {
    b.depth_init_S = detail::depth_term(source.output->depth_init, *source.depth, weights.berhu_c_fraction,
                                        weights.alpha_source, grad(r.source.depth_init), r.depth_empty);
    b.depth_final_S = detail::depth_term(source.output->depth_final, *source.depth, weights.berhu_c_fraction,
                                         weights.alpha_source, grad(r.source.depth_final), r.depth_empty);
  }
  if (target_seg.output && target_seg.seg) {
    b.seg_init_T = detail::seg_term(target_seg.output->sem_init, *target_seg.seg, 1.0, grad(r.target_seg.sem_init));
    b.seg_final_T =
        detail::seg_term(target_seg.output->sem_final, *target_seg.seg, 1.0, grad(r.target_seg.sem_final));
  }
  if (target_depth.output && target_depth.depth) {
    b.depth_init_T = detail::depth_term(target_depth.output->depth_init, *target_depth.depth, weights.berhu_c_fraction,
                                        weights.alpha_target, grad(r.target_depth.depth_init), r.depth_empty);
    b.depth_final_T =
        detail::depth_term(target_depth.output->depth_final, *target_depth.depth, weights.berhu_c_fraction,
                           weights.alpha_target, grad(r.target_depth.depth_final), r.depth_empty);
  }
  b.total = b.recombine(weights);
  return r;
}

/// Single-output form: the same target prediction carries the pseudo-label
/// and depth supervision.
inline LossBreakdown total_loss(const ModelOutput& out_s, const ModelOutput& out_t, SegTargets y_s,
                                DepthTargets d_s_inv, std::span<const std::uint8_t> pseudo_t,
                                std::span<const float> w_t, DepthTargets d_t_inv, const LossWeights& weights) {
  return total_loss(LossPass{&out_s, y_s, d_s_inv}, LossPass{&out_t, SegTargets{pseudo_t, w_t}, {}},
                    LossPass{&out_t, {}, d_t_inv}, weights)
      .breakdown;
}

}  // namespace corda
