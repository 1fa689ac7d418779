#include <gtest/gtest.h>

#include <random>

#include "corda/model.hpp"
#include "corda/refinement.hpp"
#include "test_util.hpp"

namespace corda {
namespace {

using testing_util::uniform;

TEST(Discrepancy, HandValuesAndSymmetry) {
  const std::vector<float> a{3.0f, 1.0f, 0.25f}, b{5.0f, 1.0f, 0.75f};
  EXPECT_EQ(depth_discrepancy(a, b), (std::vector<float>{2.0f, 0.0f, 0.5f}));
  EXPECT_EQ(depth_discrepancy(a, b), depth_discrepancy(b, a));
  EXPECT_EQ(depth_discrepancy(a, a), std::vector<float>(3, 0.0f));
  EXPECT_THROW(depth_discrepancy(a, std::vector<float>(2)), ContractError);
}

TEST(DifficultyWeights, NoDiscrepancyIsFullWeight) {
  const std::vector<float> delta(4, 0.0f), d{0.0f, 0.1f, 0.5f, 1.0f};
  const auto m = difficulty_weights(delta, d, {});
  for (float w : m.w) EXPECT_EQ(w, 1.0f);
}

TEST(DifficultyWeights, DiscrepancyEqualToDepthClampsToZero) {
  const std::vector<float> d{0.2f, 0.8f}, delta = d;
  const auto m = difficulty_weights(delta, d, {});
  for (float w : m.w) EXPECT_NEAR(w, 0.0f, 1e-5f);
  const std::vector<float> big{0.5f, 2.0f};
  for (float w : difficulty_weights(big, d, {}).w) EXPECT_EQ(w, 0.0f);
}

TEST(DifficultyWeights, HalfDiscrepancyHandValue) {
  const std::vector<float> delta{0.4f}, d{0.8f};
  const auto m = difficulty_weights(delta, d, {}, 1e-6f);
  // Independent double-precision evaluation of the same expression.
  const double expect = 1.0 - double(0.4f) / (double(0.8f) + double(1e-6f));
  EXPECT_NEAR(m.w[0], expect, 1e-6);
  EXPECT_NEAR(m.w[0], 0.5, 1e-6);
}

TEST(DifficultyWeights, InvalidPixelsKeepFullWeight) {
  const std::vector<float> delta{0.9f, 0.9f}, d{0.1f, 0.1f};
  const std::vector<std::uint8_t> valid{0, 1};
  const auto m = difficulty_weights(delta, d, valid);
  EXPECT_EQ(m.w[0], 1.0f);
  EXPECT_EQ(m.w[1], 0.0f);
  EXPECT_EQ(m.mean_valid(), 0.0);
  EXPECT_EQ(m.mean(), 0.5);
}

TEST(DifficultyWeights, RejectsNegativeDiscrepancyAndBadEpsilon) {
  const std::vector<float> d{0.5f};
  EXPECT_THROW(difficulty_weights(std::vector<float>{-0.1f}, d, {}), ContractError);
  EXPECT_THROW(difficulty_weights(std::vector<float>{0.1f}, d, {}, 0.0f), ContractError);
}

TEST(DifficultyWeights, RangeHoldsForRandomInputs) {
  std::mt19937_64 rng(77);
  for (int trial = 0; trial < 1000; ++trial) {
    const std::size_t n = 1 + rng() % 16;
    std::vector<float> delta(n), d(n);
    std::vector<std::uint8_t> valid(n);
    for (std::size_t i = 0; i < n; ++i) {
      delta[i] = uniform(rng, 0.0f, 3.0f);
      d[i] = trial % 3 == 0 ? 0.0f : uniform(rng, 0.0f, 1.0f);
      valid[i] = rng() % 3 != 0;
    }
    for (float w : difficulty_weights(delta, d, valid).w) {
      ASSERT_GE(w, 0.0f);
      ASSERT_LE(w, 1.0f);
    }
  }
}

TEST(DifficultyWeights, MonotoneInDiscrepancyAndDepth) {
  std::mt19937_64 rng(78);
  for (int trial = 0; trial < 500; ++trial) {
    const float d = uniform(rng, 0.01f, 1.0f), delta = uniform(rng, 0.001f, 1.0f);
    const float bigger_delta = delta + uniform(rng, 0.0f, 0.5f), bigger_d = d + uniform(rng, 0.0f, 0.5f);
    auto w = [](float dl, float dt) { return difficulty_weights(std::vector<float>{dl}, std::vector<float>{dt}, {}).w[0]; };
    EXPECT_GE(w(delta, d), w(bigger_delta, d));
    EXPECT_LE(w(delta, d), w(delta, bigger_d));
  }
}

TEST(DifficultyWeights, TiedDepthDecodersGiveFullWeightEverywhere) {
  ModelConfig c;
  c.backbone_widths = {6, 8};
  c.backbone_strides = {2, 2};
  c.features = 6;
  c.tie_depth_init = true;
  const Model m(c);
  std::mt19937_64 rng(79);
  const Tensor x = testing_util::random_tensor(2, 3, 16, 16, rng, 0, 1);
  const auto out = m.forward(x, Domain::kTarget);
  const auto both = m.final_depth_both(out.f_depth_o, 16, 16);
  const auto delta = depth_discrepancy(both[0].data(), both[1].data());
  std::vector<float> d(delta.size());
  for (auto& v : d) v = uniform(rng, 0.0f, 1.0f);
  const auto wm = difficulty_weights(delta, d, {});
  for (float w : wm.w) EXPECT_EQ(w, 1.0f);
  EXPECT_EQ(wm.mean_valid(), 1.0);
}

}  // namespace
}  // namespace corda
