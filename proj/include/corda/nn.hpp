#pragma once

// Minimal convolutional building blocks with explicit backward passes.
// Activations use the channel-major Tensor layout so that a convolution is a
// single GEMM over the im2col matrix of the whole batch.

#include <cmath>
#include <random>
#include <string>
#include <vector>

#include <Eigen/Core>

#include "corda/tensor.hpp"

namespace corda::nn {

using RowMatrix = Eigen::Matrix<float, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using MatrixMap = Eigen::Map<RowMatrix>;
using ConstMatrixMap = Eigen::Map<const RowMatrix>;

/// Square-kernel 2D convolution with bias. Weights are stored as
/// out x (in * k * k), matching the im2col row order (in, ky, kx).
struct Conv2d {
  int in = 0;
  int out = 0;
  int kernel = 1;
  int stride = 1;
  int pad = 0;
  FloatBuffer weight;
  FloatBuffer bias;
  FloatBuffer grad_weight;
  FloatBuffer grad_bias;

  Conv2d() = default;
  Conv2d(int in_ch, int out_ch, int k, int s = 1, int p = -1)
      : in(in_ch), out(out_ch), kernel(k), stride(s), pad(p < 0 ? k / 2 : p),
        weight(static_cast<std::size_t>(out_ch) * in_ch * k * k, 0.0f),
        bias(out_ch, 0.0f),
        grad_weight(weight.size(), 0.0f),
        grad_bias(out_ch, 0.0f) {
    require(in_ch > 0 && out_ch > 0 && k > 0 && s > 0, "Conv2d: bad geometry");
  }

  int fan_in() const { return in * kernel * kernel; }
  int out_size(int n) const { return (n + 2 * pad - kernel) / stride + 1; }
  bool pointwise() const { return kernel == 1 && stride == 1 && pad == 0; }

  void zero_grad() {
    std::fill(grad_weight.begin(), grad_weight.end(), 0.0f);
    std::fill(grad_bias.begin(), grad_bias.end(), 0.0f);
  }

  void zero_params() {
    std::fill(weight.begin(), weight.end(), 0.0f);
    std::fill(bias.begin(), bias.end(), 0.0f);
  }

  /// He-normal weights, zero bias.
  template <typename Rng>
  void init_he(Rng& rng) {
    std::normal_distribution<float> dist(0.0f, std::sqrt(2.0f / static_cast<float>(fan_in())));
    for (auto& v : weight) v = dist(rng);
    std::fill(bias.begin(), bias.end(), 0.0f);
  }

  bool same_params(const Conv2d& o) const { return weight == o.weight && bias == o.bias; }
};

/// Column buffer for a convolution of input x: rows (ci, ky, kx), columns
/// (n, oy, ox). Out-of-image taps are zero.
inline RowMatrix im2col(const Conv2d& conv, const Tensor& x) {
  const int ho = conv.out_size(x.h()), wo = conv.out_size(x.w());
  const int k = conv.kernel;
  const Eigen::Index cols = static_cast<Eigen::Index>(x.n()) * ho * wo;
  RowMatrix m(static_cast<Eigen::Index>(conv.in) * k * k, cols);
  for (int ci = 0; ci < conv.in; ++ci) {
    for (int ky = 0; ky < k; ++ky) {
      for (int kx = 0; kx < k; ++kx) {
        float* row = m.row((ci * k + ky) * k + kx).data();
        for (int n = 0; n < x.n(); ++n) {
          const float* src = x.plane_of(n, ci).data();
          for (int oy = 0; oy < ho; ++oy) {
            const int iy = oy * conv.stride - conv.pad + ky;
            float* dst = row + (static_cast<std::size_t>(n) * ho + oy) * wo;
            if (iy < 0 || iy >= x.h()) {
              std::fill(dst, dst + wo, 0.0f);
              continue;
            }
            const float* srow = src + static_cast<std::size_t>(iy) * x.w();
            for (int ox = 0; ox < wo; ++ox) {
              const int ix = ox * conv.stride - conv.pad + kx;
              dst[ox] = (ix >= 0 && ix < x.w()) ? srow[ix] : 0.0f;
            }
          }
        }
      }
    }
  }
  return m;
}

/// Scatter-add of a column-gradient buffer back onto an input-shaped tensor.
inline void col2im(const Conv2d& conv, const RowMatrix& cols, Tensor& dx) {
  const int ho = conv.out_size(dx.h()), wo = conv.out_size(dx.w());
  const int k = conv.kernel;
  for (int ci = 0; ci < conv.in; ++ci) {
    for (int ky = 0; ky < k; ++ky) {
      for (int kx = 0; kx < k; ++kx) {
        const float* row = cols.row((ci * k + ky) * k + kx).data();
        for (int n = 0; n < dx.n(); ++n) {
          float* dst = dx.plane_of(n, ci).data();
          for (int oy = 0; oy < ho; ++oy) {
            const int iy = oy * conv.stride - conv.pad + ky;
            if (iy < 0 || iy >= dx.h()) continue;
            const float* src = row + (static_cast<std::size_t>(n) * ho + oy) * wo;
            float* drow = dst + static_cast<std::size_t>(iy) * dx.w();
            for (int ox = 0; ox < wo; ++ox) {
              const int ix = ox * conv.stride - conv.pad + kx;
              if (ix >= 0 && ix < dx.w()) drow[ix] += src[ox];
            }
          }
        }
      }
    }
  }
}

/// Cached state a convolution needs for its backward pass.
struct ConvTrace {
  RowMatrix cols;
  int in_h = 0;
  int in_w = 0;
  int batch = 0;
};

inline Tensor conv_forward(const Conv2d& conv, const Tensor& x, ConvTrace* trace = nullptr) {
  require(x.c() == conv.in, "conv_forward: expected " + std::to_string(conv.in) +
                                " input channels, got " + std::to_string(x.c()));
  const int ho = conv.out_size(x.h()), wo = conv.out_size(x.w());
  Tensor y(x.n(), conv.out, ho, wo);
  const Eigen::Index cols = static_cast<Eigen::Index>(x.n()) * ho * wo;
  ConstMatrixMap w(conv.weight.data(), conv.out, conv.fan_in());
  MatrixMap out(y.raw(), conv.out, cols);

  RowMatrix local;
  if (conv.pointwise()) {
    ConstMatrixMap xin(x.raw(), conv.in, cols);
    out.noalias() = w * xin;
    if (trace) trace->cols = xin;
  } else {
    local = im2col(conv, x);
    out.noalias() = w * local;
    if (trace) trace->cols = std::move(local);
  }
  for (int o = 0; o < conv.out; ++o) out.row(o).array() += conv.bias[o];
  if (trace) {
    trace->in_h = x.h();
    trace->in_w = x.w();
    trace->batch = x.n();
  }
  return y;
}

/// Accumulates parameter gradients into conv and returns the input gradient
/// (empty when need_input_grad is false).
inline Tensor conv_backward(Conv2d& conv, const ConvTrace& trace, const Tensor& dy,
                            bool need_input_grad = true) {
  const Eigen::Index cols = static_cast<Eigen::Index>(dy.n()) * dy.h() * dy.w();
  require(dy.c() == conv.out && cols == trace.cols.cols(), "conv_backward: shape mismatch");
  ConstMatrixMap g(dy.raw(), conv.out, cols);
  MatrixMap gw(conv.grad_weight.data(), conv.out, conv.fan_in());
  gw.noalias() += g * trace.cols.transpose();
  for (int o = 0; o < conv.out; ++o) conv.grad_bias[o] += g.row(o).sum();
  if (!need_input_grad) return {};

  ConstMatrixMap w(conv.weight.data(), conv.out, conv.fan_in());
  Tensor dx(trace.batch, conv.in, trace.in_h, trace.in_w);
  if (conv.pointwise()) {
    MatrixMap dxm(dx.raw(), conv.in, cols);
    dxm.noalias() = w.transpose() * g;
  } else {
    RowMatrix dcols = w.transpose() * g;
    col2im(conv, dcols, dx);
  }
  return dx;
}

inline Tensor relu(Tensor x) {
  for (auto& v : x.data()) v = v > 0.0f ? v : 0.0f;
  return x;
}

/// Gradient of relu given its output.
inline Tensor relu_backward(const Tensor& out, Tensor dy) {
  require(out.same_shape(dy), "relu_backward: shape mismatch");
  for (std::size_t i = 0; i < dy.size(); ++i)
    if (out.raw()[i] <= 0.0f) dy.raw()[i] = 0.0f;
  return dy;
}

inline float sigmoid(float v) { return 1.0f / (1.0f + std::exp(-v)); }

inline Tensor sigmoid(Tensor x) {
  for (auto& v : x.data()) v = sigmoid(v);
  return x;
}

/// Per-axis source taps for half-pixel bilinear resampling.
struct ResampleAxis {
  std::vector<int> lo;
  std::vector<int> hi;
  std::vector<float> frac;
};

inline ResampleAxis resample_axis(int in, int out) {
  ResampleAxis ax;
  ax.lo.resize(out);
  ax.hi.resize(out);
  ax.frac.resize(out);
  const double scale = static_cast<double>(in) / out;
  for (int i = 0; i < out; ++i) {
    double src = (i + 0.5) * scale - 0.5;
    if (src < 0.0) src = 0.0;
    int lo = static_cast<int>(std::floor(src));
    if (lo > in - 1) lo = in - 1;
    ax.lo[i] = lo;
    ax.hi[i] = std::min(lo + 1, in - 1);
    ax.frac[i] = static_cast<float>(src - lo);
  }
  return ax;
}

/// Bilinear resize (half-pixel centers, edge clamp). Interpolates as
/// a + t*(b - a) so constant maps are reproduced exactly.
inline Tensor upsample_bilinear(const Tensor& x, int out_h, int out_w) {
  require(x.h() > 0 && x.w() > 0 && out_h > 0 && out_w > 0, "upsample_bilinear: empty");
  const auto ay = resample_axis(x.h(), out_h);
  const auto ax = resample_axis(x.w(), out_w);
  Tensor y(x.n(), x.c(), out_h, out_w);
  for (int c = 0; c < x.c(); ++c) {
    for (int n = 0; n < x.n(); ++n) {
      const auto src = x.plane_of(n, c);
      auto dst = y.plane_of(n, c);
      for (int oy = 0; oy < out_h; ++oy) {
        const float* r0 = src.data() + static_cast<std::size_t>(ay.lo[oy]) * x.w();
        const float* r1 = src.data() + static_cast<std::size_t>(ay.hi[oy]) * x.w();
        const float ty = ay.frac[oy];
        for (int ox = 0; ox < out_w; ++ox) {
          const int x0 = ax.lo[ox], x1 = ax.hi[ox];
          const float tx = ax.frac[ox];
          const float top = r0[x0] + tx * (r0[x1] - r0[x0]);
          const float bot = r1[x0] + tx * (r1[x1] - r1[x0]);
          dst[static_cast<std::size_t>(oy) * out_w + ox] = top + ty * (bot - top);
        }
      }
    }
  }
  return y;
}

inline Tensor upsample_bilinear_backward(const Tensor& dy, int in_h, int in_w) {
  const auto ay = resample_axis(in_h, dy.h());
  const auto ax = resample_axis(in_w, dy.w());
  Tensor dx(dy.n(), dy.c(), in_h, in_w);
  for (int c = 0; c < dy.c(); ++c) {
    for (int n = 0; n < dy.n(); ++n) {
      const auto g = dy.plane_of(n, c);
      auto d = dx.plane_of(n, c);
      for (int oy = 0; oy < dy.h(); ++oy) {
        float* r0 = d.data() + static_cast<std::size_t>(ay.lo[oy]) * in_w;
        float* r1 = d.data() + static_cast<std::size_t>(ay.hi[oy]) * in_w;
        const float ty = ay.frac[oy];
        for (int ox = 0; ox < dy.w(); ++ox) {
          const float v = g[static_cast<std::size_t>(oy) * dy.w() + ox];
          const int x0 = ax.lo[ox], x1 = ax.hi[ox];
          const float tx = ax.frac[ox];
          r0[x0] += v * (1.0f - ty) * (1.0f - tx);
          r0[x1] += v * (1.0f - ty) * tx;
          r1[x0] += v * ty * (1.0f - tx);
          r1[x1] += v * ty * tx;
        }
      }
    }
  }
  return dx;
}

}  // namespace corda::nn
