#include "pv/tensor.hpp"

#include <algorithm>
#include <cmath>

#include "pv/errors.hpp"

namespace pv {

std::string to_string(const Dims& d) {
  return "(" + std::to_string(d.height) + "x" + std::to_string(d.width) + "x" +
         std::to_string(d.channels) + ")";
}

Tensor Tensor::sample(int n) const {
  Tensor out(channels, 1, height, width);
  for (int c = 0; c < channels; ++c) std::ranges::copy(plane(c, n), out.plane(c, 0).begin());
  return out;
}

bool Tensor::all_finite() const {
  return std::ranges::all_of(data, [](double v) { return std::isfinite(v); });
}

Tensor gather(const Tensor& t, std::span<const int> indices) {
  Tensor out(t.channels, static_cast<int>(indices.size()), t.height, t.width);
  for (int c = 0; c < t.channels; ++c)
    for (std::size_t i = 0; i < indices.size(); ++i)
      std::ranges::copy(t.plane(c, indices[i]), out.plane(c, static_cast<int>(i)).begin());
  return out;
}

Tensor concat(std::span<const Tensor> parts) {
  if (parts.empty()) return {};
  int total = 0;
  for (const auto& p : parts) {
    if (p.dims() != parts.front().dims()) throw ShapeError("concat: mismatched sample dims");
    total += p.batch;
  }
  const auto& f = parts.front();
  Tensor out(f.channels, total, f.height, f.width);
  for (int c = 0; c < f.channels; ++c) {
    int n = 0;
    for (const auto& p : parts)
      for (int i = 0; i < p.batch; ++i) std::ranges::copy(p.plane(c, i), out.plane(c, n++).begin());
  }
  return out;
}

double Image::min() const { return data.empty() ? 0.0 : *std::ranges::min_element(data); }
double Image::max() const { return data.empty() ? 0.0 : *std::ranges::max_element(data); }
bool Image::all_finite() const {
  return std::ranges::all_of(data, [](double v) { return std::isfinite(v); });
}

Tensor to_tensor(std::span<const Image> images) {
  if (images.empty()) throw ArgumentError("to_tensor: empty image list");
  const Image& f = images.front();
  Tensor out(f.channels, static_cast<int>(images.size()), f.height, f.width);
  for (std::size_t n = 0; n < images.size(); ++n) {
    const Image& im = images[n];
    if (!im.same_shape(f)) throw ShapeError("to_tensor: images differ in shape");
    for (int y = 0; y < im.height; ++y)
      for (int x = 0; x < im.width; ++x)
        for (int k = 0; k < im.channels; ++k) out.at(k, static_cast<int>(n), y, x) = im.at(y, x, k);
  }
  return out;
}

Tensor to_tensor(const Image& image) { return to_tensor(std::span<const Image>(&image, 1)); }

Image to_image(const Tensor& t, int n) {
  Image out(t.height, t.width, t.channels);
  for (int y = 0; y < t.height; ++y)
    for (int x = 0; x < t.width; ++x)
      for (int k = 0; k < t.channels; ++k) out.at(y, x, k) = t.at(k, n, y, x);
  return out;
}

}  // namespace pv
