#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <new>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

namespace corda {

/// Violated precondition on shapes, ids or arguments.
struct ContractError : std::logic_error {
  using std::logic_error::logic_error;
};

/// Invalid configuration (bad ranges, unknown keys, too few classes).
struct ConfigError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

struct IoError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

/// File decoded but its content does not match the expected layout.
struct FormatError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

inline void require(bool cond, const std::string& what) {
  if (!cond) throw ContractError(what);
}

/// Allocator with a fixed 64-byte alignment, so vectorised kernels take the
/// same code path for a buffer on every run regardless of heap history.
template <typename T>
struct AlignedAllocator {
  using value_type = T;
  static constexpr std::align_val_t kAlignment{64};

  AlignedAllocator() = default;
  template <typename U>
  AlignedAllocator(const AlignedAllocator<U>&) noexcept {}

  T* allocate(std::size_t n) { return static_cast<T*>(::operator new(n * sizeof(T), kAlignment)); }
  void deallocate(T* p, std::size_t) noexcept { ::operator delete(p, kAlignment); }

  template <typename U>
  bool operator==(const AlignedAllocator<U>&) const noexcept {
    return true;
  }
};

using FloatBuffer = std::vector<float, AlignedAllocator<float>>;

enum class Domain : int { kSource = 0, kTarget = 1 };

inline const char* domain_name(Domain d) {
  return d == Domain::kSource ? "source" : "target";
}

inline constexpr std::uint8_t kIgnoreLabel = 255;

/// Row-major H x W x channels grid used for single samples on disk and in
/// memory (images, label maps, depth maps, weight maps).
template <typename T>
class Grid {
 public:
  Grid() = default;
  Grid(int height, int width, int channels = 1, T fill = T{})
      : h_(height), w_(width), ch_(channels),
        data_(static_cast<std::size_t>(height) * width * channels, fill) {
    require(height >= 0 && width >= 0 && channels > 0, "Grid: bad dims");
  }

  int height() const { return h_; }
  int width() const { return w_; }
  int channels() const { return ch_; }
  std::size_t size() const { return data_.size(); }
  std::size_t pixels() const { return static_cast<std::size_t>(h_) * w_; }

  T& operator()(int y, int x, int c = 0) {
    return data_[(static_cast<std::size_t>(y) * w_ + x) * ch_ + c];
  }
  const T& operator()(int y, int x, int c = 0) const {
    return data_[(static_cast<std::size_t>(y) * w_ + x) * ch_ + c];
  }

  std::span<T> data() { return data_; }
  std::span<const T> data() const { return data_; }
  std::vector<T>& storage() { return data_; }

  bool same_dims(int height, int width) const { return h_ == height && w_ == width; }

  friend bool operator==(const Grid&, const Grid&) = default;

 private:
  int h_ = 0;
  int w_ = 0;
  int ch_ = 1;
  std::vector<T> data_;
};

/// Dense float activation tensor for a batch of N samples with C channels,
/// stored channel-major ([C][N][H][W]) so convolution GEMM output lands in
/// place without a transpose.
class Tensor {
 public:
  Tensor() = default;
  Tensor(int n, int c, int h, int w, float fill = 0.0f)
      : n_(n), c_(c), h_(h), w_(w),
        data_(static_cast<std::size_t>(n) * c * h * w, fill) {
    require(n >= 0 && c >= 0 && h >= 0 && w >= 0, "Tensor: negative dims");
  }

  int n() const { return n_; }
  int c() const { return c_; }
  int h() const { return h_; }
  int w() const { return w_; }
  std::size_t plane() const { return static_cast<std::size_t>(h_) * w_; }
  /// Elements per channel across the batch (N*H*W).
  std::size_t channel_stride() const { return static_cast<std::size_t>(n_) * h_ * w_; }
  std::size_t size() const { return data_.size(); }
  bool empty() const { return data_.empty(); }

  float& at(int n, int c, int y, int x) {
    return data_[((static_cast<std::size_t>(c) * n_ + n) * h_ + y) * w_ + x];
  }
  float at(int n, int c, int y, int x) const {
    return data_[((static_cast<std::size_t>(c) * n_ + n) * h_ + y) * w_ + x];
  }

  float* raw() { return data_.data(); }
  const float* raw() const { return data_.data(); }
  std::span<float> data() { return data_; }
  std::span<const float> data() const { return data_; }

  /// Contiguous H x W plane of sample n, channel c.
  std::span<float> plane_of(int n, int c) {
    return {data_.data() + (static_cast<std::size_t>(c) * n_ + n) * plane(), plane()};
  }
  std::span<const float> plane_of(int n, int c) const {
    return {data_.data() + (static_cast<std::size_t>(c) * n_ + n) * plane(), plane()};
  }

  bool same_shape(const Tensor& o) const {
    return n_ == o.n_ && c_ == o.c_ && h_ == o.h_ && w_ == o.w_;
  }

  void fill(float v) { std::fill(data_.begin(), data_.end(), v); }

  Tensor& operator+=(const Tensor& o) {
    require(same_shape(o), "Tensor +=: shape mismatch");
    for (std::size_t i = 0; i < data_.size(); ++i) data_[i] += o.data_[i];
    return *this;
  }

  friend bool operator==(const Tensor&, const Tensor&) = default;

 private:
  int n_ = 0;
  int c_ = 0;
  int h_ = 0;
  int w_ = 0;
  FloatBuffer data_;
};

inline float max_abs_diff(const Tensor& a, const Tensor& b) {
  require(a.same_shape(b), "max_abs_diff: shape mismatch");
  float m = 0.0f;
  for (std::size_t i = 0; i < a.size(); ++i) m = std::max(m, std::abs(a.raw()[i] - b.raw()[i]));
  return m;
}

/// Packs HWC float images of equal size into an N x 3 x H x W tensor.
inline Tensor stack_images(std::span<const Grid<float>* const> images) {
  require(!images.empty(), "stack_images: empty batch");
  const int h = images[0]->height(), w = images[0]->width(), c = images[0]->channels();
  Tensor t(static_cast<int>(images.size()), c, h, w);
  for (int n = 0; n < t.n(); ++n) {
    const auto& im = *images[n];
    require(im.same_dims(h, w) && im.channels() == c, "stack_images: size mismatch");
    for (int ch = 0; ch < c; ++ch)
      for (int y = 0; y < h; ++y)
        for (int x = 0; x < w; ++x) t.at(n, ch, y, x) = im(y, x, ch);
  }
  return t;
}

}  // namespace corda
