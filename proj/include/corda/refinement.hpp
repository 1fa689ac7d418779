#pragma once

// Pseudo-label refinement from depth-decoder disagreement on target images:
// delta = |f_S(x) - f_T(x)|, w = relu(1 - delta / (d_T + eps)).

#include <cmath>
#include <cstdint>
#include <span>
#include <vector>

#include "corda/tensor.hpp"

namespace corda {

inline constexpr float kDifficultyEpsilon = 1e-6f;

struct WeightMap {
  std::vector<float> w;              // [0, 1]
  std::vector<float> delta;          // >= 0
  std::vector<std::uint8_t> valid;

  double mean() const {
    if (w.empty()) return 0.0;
    double s = 0.0;
    for (float v : w) s += v;
    return s / static_cast<double>(w.size());
  }

  double mean_valid() const {
    double s = 0.0;
    std::size_t n = 0;
    for (std::size_t i = 0; i < w.size(); ++i)
      if (valid.empty() || valid[i]) {
        s += w[i];
        ++n;
      }
    return n ? s / static_cast<double>(n) : 1.0;
  }

  double zero_fraction() const {
    if (w.empty()) return 0.0;
    std::size_t z = 0;
    for (float v : w) z += v == 0.0f;
    return static_cast<double>(z) / static_cast<double>(w.size());
  }
};

inline std::vector<float> depth_discrepancy(std::span<const float> pred_src, std::span<const float> pred_tgt) {
  require(pred_src.size() == pred_tgt.size(), "depth_discrepancy: shape mismatch");
  std::vector<float> d(pred_src.size());
  for (std::size_t i = 0; i < d.size(); ++i) d[i] = std::abs(pred_src[i] - pred_tgt[i]);
  return d;
}

/// Weights are a constant for the loss: nothing here is differentiated.
/// Pixels without valid pseudo depth keep weight 1.
inline WeightMap difficulty_weights(std::span<const float> delta, std::span<const float> inv_depth_t,
                                    std::span<const std::uint8_t> valid, float epsilon = kDifficultyEpsilon) {
  require(delta.size() == inv_depth_t.size(), "difficulty_weights: delta/depth size mismatch");
  require(valid.empty() || valid.size() == delta.size(), "difficulty_weights: mask size mismatch");
  require(epsilon > 0.0f, "difficulty_weights: epsilon must be > 0");
  WeightMap m;
  m.delta.assign(delta.begin(), delta.end());
  m.valid = valid.empty() ? std::vector<std::uint8_t>(delta.size(), 1)
                          : std::vector<std::uint8_t>(valid.begin(), valid.end());
  m.w.assign(delta.size(), 1.0f);
  for (std::size_t i = 0; i < delta.size(); ++i) {
    require(delta[i] >= 0.0f, "difficulty_weights: negative discrepancy");
    if (!m.valid[i]) continue;
    const float v = 1.0f - delta[i] / (inv_depth_t[i] + epsilon);
    m.w[i] = v > 0.0f ? std::min(v, 1.0f) : 0.0f;
  }
  return m;
}

}  // namespace corda
