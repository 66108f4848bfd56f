#pragma once

#include <cstddef>
#include <new>
#include <span>
#include <string>
#include <vector>

namespace pv {

/// Cache-line aligned storage. Vectorized kernels peel a number of leading
/// elements that depends on the buffer address; a fixed alignment keeps the
/// summation order, and therefore every result bit, reproducible.
template <class T>
struct AlignedAllocator {
  using value_type = T;
  static constexpr std::align_val_t alignment{64};

  AlignedAllocator() noexcept = default;
  template <class U>
  AlignedAllocator(const AlignedAllocator<U>&) noexcept {}

  T* allocate(std::size_t n) { return static_cast<T*>(::operator new(n * sizeof(T), alignment)); }
  void deallocate(T* p, std::size_t) noexcept { ::operator delete(p, alignment); }

  template <class U>
  bool operator==(const AlignedAllocator<U>&) const noexcept { return true; }
};

using Buffer = std::vector<double, AlignedAllocator<double>>;

/// Per-sample spatial layout (channels, height, width).
struct Dims {
  int channels = 0;
  int height = 0;
  int width = 0;

  std::size_t count() const { return static_cast<std::size_t>(channels) * height * width; }
  friend bool operator==(const Dims&, const Dims&) = default;
};

std::string to_string(const Dims& d);

/// Batched activations stored channel-major: index (c, n, y, x) lives at
/// ((c * batch + n) * height + y) * width + x. Each channel's batch is one
/// contiguous block, which makes a convolution one GEMM over the whole batch.
struct Tensor {
  int channels = 0;
  int batch = 0;
  int height = 0;
  int width = 0;
  Buffer data;

  Tensor() = default;
  Tensor(int c, int n, int h, int w, double fill = 0.0)
      : channels(c), batch(n), height(h), width(w),
        data(static_cast<std::size_t>(c) * n * h * w, fill) {}

  Dims dims() const { return {channels, height, width}; }
  std::size_t size() const { return data.size(); }
  std::size_t plane() const { return static_cast<std::size_t>(height) * width; }

  std::size_t index(int c, int n, int y, int x) const {
    return ((static_cast<std::size_t>(c) * batch + n) * height + y) * width + x;
  }
  double& at(int c, int n, int y, int x) { return data[index(c, n, y, x)]; }
  double at(int c, int n, int y, int x) const { return data[index(c, n, y, x)]; }

  /// The (c, n) spatial plane.
  std::span<double> plane(int c, int n) {
    return {data.data() + (static_cast<std::size_t>(c) * batch + n) * plane(), plane()};
  }
  std::span<const double> plane(int c, int n) const {
    return {data.data() + (static_cast<std::size_t>(c) * batch + n) * plane(), plane()};
  }

  /// Copy of sample n as a batch-of-one tensor.
  Tensor sample(int n) const;
  bool all_finite() const;
};

/// Selects samples `indices` out of `t` (in order) into a new batch.
Tensor gather(const Tensor& t, std::span<const int> indices);
/// Concatenates batches with identical per-sample dims.
Tensor concat(std::span<const Tensor> parts);

/// Row-major image stored height x width x channels. RGB images hold values in
/// [0,1]; single-channel images double as saliency maps.
struct Image {
  int height = 0;
  int width = 0;
  int channels = 0;
  Buffer data;

  Image() = default;
  Image(int h, int w, int c, double fill = 0.0)
      : height(h), width(w), channels(c), data(static_cast<std::size_t>(h) * w * c, fill) {}

  std::size_t size() const { return data.size(); }
  double& at(int y, int x, int k = 0) {
    return data[(static_cast<std::size_t>(y) * width + x) * channels + k];
  }
  double at(int y, int x, int k = 0) const {
    return data[(static_cast<std::size_t>(y) * width + x) * channels + k];
  }
  bool same_shape(const Image& o) const {
    return height == o.height && width == o.width && channels == o.channels;
  }
  double min() const;
  double max() const;
  bool all_finite() const;
};

/// Packs images (all the same shape) into a (channels, n, h, w) batch.
Tensor to_tensor(std::span<const Image> images);
Tensor to_tensor(const Image& image);
/// Extracts sample n of a batch as an HWC image.
Image to_image(const Tensor& t, int n = 0);

}  // namespace pv
