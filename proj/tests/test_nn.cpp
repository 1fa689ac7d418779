#include <gtest/gtest.h>

#include <random>

#include "corda/nn.hpp"
#include "test_util.hpp"

namespace corda::nn {
namespace {

// Direct seven-loop convolution, independent of im2col/GEMM.
Tensor naive_conv(const Conv2d& c, const Tensor& x) {
  const int ho = c.out_size(x.h()), wo = c.out_size(x.w());
  Tensor y(x.n(), c.out, ho, wo);
  for (int n = 0; n < x.n(); ++n)
    for (int o = 0; o < c.out; ++o)
      for (int oy = 0; oy < ho; ++oy)
        for (int ox = 0; ox < wo; ++ox) {
          double acc = c.bias[o];
          for (int i = 0; i < c.in; ++i)
            for (int ky = 0; ky < c.kernel; ++ky)
              for (int kx = 0; kx < c.kernel; ++kx) {
                const int iy = oy * c.stride - c.pad + ky, ix = ox * c.stride - c.pad + kx;
                if (iy < 0 || iy >= x.h() || ix < 0 || ix >= x.w()) continue;
                acc += c.weight[((o * c.in + i) * c.kernel + ky) * c.kernel + kx] * x.at(n, i, iy, ix);
              }
          y.at(n, o, oy, ox) = static_cast<float>(acc);
        }
  return y;
}

struct ConvCase {
  int in, out, k, s, h;
};

class ConvTest : public ::testing::TestWithParam<ConvCase> {};

TEST_P(ConvTest, MatchesDirectConvolution) {
  const auto p = GetParam();
  std::mt19937_64 rng(3);
  Conv2d c(p.in, p.out, p.k, p.s);
  c.init_he(rng);
  for (auto& b : c.bias) b = testing_util::uniform(rng, -0.5f, 0.5f);
  const Tensor x = testing_util::random_tensor(2, p.in, p.h, p.h + 2, rng);
  EXPECT_LT(max_abs_diff(conv_forward(c, x), naive_conv(c, x)), 1e-5f);
}

TEST_P(ConvTest, BackwardMatchesFiniteDifferences) {
  const auto p = GetParam();
  std::mt19937_64 rng(11);
  Conv2d c(p.in, p.out, p.k, p.s);
  c.init_he(rng);
  Tensor x = testing_util::random_tensor(2, p.in, p.h, p.h, rng);
  ConvTrace tr;
  const Tensor y = conv_forward(c, x, &tr);
  const Tensor probe = testing_util::random_tensor(y.n(), y.c(), y.h(), y.w(), rng);
  // L = <probe, conv(x)>, linear in x and in the weights.
  auto loss = [&](const Conv2d& cc, const Tensor& xx) {
    const Tensor yy = naive_conv(cc, xx);
    double s = 0;
    for (std::size_t i = 0; i < yy.size(); ++i) s += double(yy.raw()[i]) * probe.raw()[i];
    return s;
  };
  c.zero_grad();
  const Tensor dx = conv_backward(c, tr, probe);
  const double eps = 1e-2;
  for (int t = 0; t < 20; ++t) {
    const std::size_t i = rng() % x.size();
    Tensor xp = x, xm = x;
    xp.raw()[i] += eps;
    xm.raw()[i] -= eps;
    EXPECT_NEAR(dx.raw()[i], (loss(c, xp) - loss(c, xm)) / (2 * eps), 2e-3);
    const std::size_t j = rng() % c.weight.size();
    Conv2d cp = c, cm = c;
    cp.weight[j] += eps;
    cm.weight[j] -= eps;
    EXPECT_NEAR(c.grad_weight[j], (loss(cp, x) - loss(cm, x)) / (2 * eps), 2e-3);
  }
  const int o = static_cast<int>(rng() % c.out);
  Conv2d cp = c, cm = c;
  cp.bias[o] += eps;
  cm.bias[o] -= eps;
  EXPECT_NEAR(c.grad_bias[o], (loss(cp, x) - loss(cm, x)) / (2 * eps), 2e-3);
}

INSTANTIATE_TEST_SUITE_P(Shapes, ConvTest,
                         ::testing::Values(ConvCase{3, 4, 3, 1, 5}, ConvCase{3, 5, 3, 2, 8}, ConvCase{4, 2, 1, 1, 4},
                                           ConvCase{2, 3, 3, 2, 7}));

TEST(ConvTest, RejectsChannelMismatch) {
  Conv2d c(3, 4, 3);
  EXPECT_THROW(conv_forward(c, Tensor(1, 2, 4, 4)), ContractError);
}

TEST(Upsample, PreservesConstantMapsExactly) {
  Tensor x(2, 3, 8, 8, 0.0f);
  for (int c = 0; c < 3; ++c)
    for (int n = 0; n < 2; ++n)
      for (auto& v : x.plane_of(n, c)) v = 0.1f * (c + 1) + 0.37f * n - 1.3f;
  const Tensor y = upsample_bilinear(x, 64, 64);
  for (int c = 0; c < 3; ++c)
    for (int n = 0; n < 2; ++n)
      for (float v : y.plane_of(n, c)) EXPECT_EQ(v, x.at(n, c, 0, 0));
}

TEST(Upsample, BackwardIsAdjoint) {
  std::mt19937_64 rng(5);
  const Tensor x = testing_util::random_tensor(1, 2, 4, 6, rng);
  const Tensor g = testing_util::random_tensor(1, 2, 32, 48, rng);
  const Tensor y = upsample_bilinear(x, 32, 48);
  const Tensor gx = upsample_bilinear_backward(g, 4, 6);
  double lhs = 0, rhs = 0;
  for (std::size_t i = 0; i < y.size(); ++i) lhs += double(y.raw()[i]) * g.raw()[i];
  for (std::size_t i = 0; i < x.size(); ++i) rhs += double(x.raw()[i]) * gx.raw()[i];
  EXPECT_NEAR(lhs, rhs, 1e-3 * std::abs(lhs) + 1e-4);
}

TEST(Upsample, IdentityAtSameSize) {
  std::mt19937_64 rng(1);
  const Tensor x = testing_util::random_tensor(1, 1, 5, 5, rng);
  EXPECT_EQ(upsample_bilinear(x, 5, 5), x);
}

}  // namespace
}  // namespace corda::nn
