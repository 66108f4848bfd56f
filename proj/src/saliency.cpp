#include "pv/saliency.hpp"

#include <algorithm>
#include <cmath>

#include "pv/digest.hpp"
#include "pv/errors.hpp"

namespace pv {

std::string SaliencyMap::digest() const { return sha256_hex(values.data); }

GradCamTrace grad_cam_trace(const ModelBundle& bundle, const Image& x, int class_index) {
  if (class_index < 0 || class_index >= bundle.class_count())
    throw ArgumentError("class index " + std::to_string(class_index) + " out of range [0, " +
                        std::to_string(bundle.class_count()) + ")");
  validate_input(bundle, x);
  const auto lock = bundle.exclusive();
  const nn::Network& net = bundle.network();
  const std::size_t head = bundle.latent_index() + 1;

  const Tensor activations = net.forward(to_tensor(x), nn::Mode::eval, nullptr, 0, head);
  nn::Tape tape;
  const Tensor scores = net.forward(activations, nn::Mode::eval, &tape, head, bundle.score_index() + 1);
  Tensor seed(scores.channels, 1, scores.height, scores.width);
  seed.at(class_index, 0, 0, 0) = 1.0;
  const Tensor grads = net.backward(tape, seed, nullptr);
  if (grads.dims() != activations.dims() || !grads.all_finite())
    throw BackendError("grad_cam: gradient unavailable at latent layer '" + bundle.latent_layer_id() + "'");

  GradCamTrace trace;
  trace.channel_weights.resize(static_cast<std::size_t>(activations.channels));
  trace.raw = Image(activations.height, activations.width, 1);
  for (int k = 0; k < activations.channels; ++k) {
    double mean = 0.0;
    for (double g : grads.plane(k, 0)) mean += g;
    mean /= static_cast<double>(grads.plane());
    trace.channel_weights[static_cast<std::size_t>(k)] = mean;
    const auto a = activations.plane(k, 0);
    for (std::size_t p = 0; p < a.size(); ++p) trace.raw.data[p] += mean * a[p];
  }
  for (double& v : trace.raw.data) v = std::max(v, 0.0);
  return trace;
}

SaliencyMap grad_cam(const ModelBundle& bundle, const Image& x, int class_index) {
  GradCamTrace trace = grad_cam_trace(bundle, x, class_index);
  const Dims in = bundle.input_dims();
  SaliencyMap m;
  m.values = normalize_map(upsample_map(trace.raw, in.height, in.width));
  m.class_index = class_index;
  m.backend = "grad_cam";
  m.target = bundle.score_kind();
  return m;
}

SaliencyMap GradCamBackend::compute(const ModelBundle& bundle, const Image& x, int class_index) const {
  return grad_cam(bundle, x, class_index);
}

Image normalize_map(const Image& raw) {
  double mx = 0.0;
  for (double v : raw.data) {
    if (std::isnan(v)) throw NumericError("normalize_map: NaN in saliency map");
    if (!std::isfinite(v)) throw NumericError("normalize_map: infinite value in saliency map");
    if (v < 0.0) throw ArgumentError("normalize_map: negative value in saliency map");
    mx = std::max(mx, v);
  }
  Image out(raw.height, raw.width, raw.channels);
  if (mx > 0.0)
    for (std::size_t i = 0; i < raw.data.size(); ++i) out.data[i] = raw.data[i] / mx;
  return out;
}

namespace {
// Source coordinate of a destination pixel centre, clamped to the source grid.
void bilinear_source(int dst, int dst_len, int src_len, int& i0, int& i1, double& frac) {
  double s = (dst + 0.5) * static_cast<double>(src_len) / dst_len - 0.5;
  s = std::clamp(s, 0.0, static_cast<double>(src_len - 1));
  i0 = static_cast<int>(std::floor(s));
  i1 = std::min(i0 + 1, src_len - 1);
  frac = s - i0;
}
}  // namespace

Image upsample_map(const Image& map, int height, int width) {
  if (map.channels != 1) throw ShapeError("upsample_map expects a single-channel map");
  if (height < map.height || width < map.width)
    throw ArgumentError("upsample_map: target smaller than source");
  Image out(height, width, 1);
  for (int y = 0; y < height; ++y) {
    int y0, y1;
    double fy;
    bilinear_source(y, height, map.height, y0, y1, fy);
    for (int x = 0; x < width; ++x) {
      int x0, x1;
      double fx;
      bilinear_source(x, width, map.width, x0, x1, fx);
      const double top = (1.0 - fx) * map.at(y0, x0) + fx * map.at(y0, x1);
      const double bottom = (1.0 - fx) * map.at(y1, x0) + fx * map.at(y1, x1);
      out.at(y, x) = (1.0 - fy) * top + fy * bottom;
    }
  }
  return out;
}

}  // namespace pv
