#include "pv/losses.hpp"

#include <cmath>
#include <vector>

#include "pv/errors.hpp"

namespace pv {

using nlohmann::json;

std::string to_string(NormalizationMode m) {
  switch (m) {
    case NormalizationMode::paper_sum: return "paper_sum";
    case NormalizationMode::mean: return "mean";
    case NormalizationMode::relative: return "relative";
  }
  return "mean";
}

NormalizationMode parse_normalization_mode(const std::string& s) {
  if (s == "mean") return NormalizationMode::mean;
  if (s == "paper_sum") return NormalizationMode::paper_sum;
  if (s == "relative") return NormalizationMode::relative;
  throw ConfigError("unknown normalization mode '" + s + "'");
}

void LossWeights::validate() const {
  if (mse < 0.0 || ssim < 0.0 || dsim < 0.0) throw ArgumentError("loss weights must be non-negative");
  if (std::abs(mse + ssim + dsim - 1.0) > 1e-9) throw ArgumentError("loss weights must sum to one");
}

json LossReport::to_json(long long step) const {
  return {{"step", step}, {"mse", mse},           {"ssim_loss", ssim_loss},
          {"dsim", dsim}, {"composite", composite}, {"mode", to_string(mode)}};
}

LossReport LossReport::from_json(const json& j) {
  LossReport r;
  r.mse = j.at("mse").get<double>();
  r.ssim_loss = j.at("ssim_loss").get<double>();
  r.dsim = j.at("dsim").get<double>();
  r.composite = j.at("composite").get<double>();
  r.mode = parse_normalization_mode(j.value("mode", "mean"));
  r.batch_size = j.value("batch_size", 0);
  return r;
}

namespace {

std::vector<double> gaussian_kernel(const SsimOptions& o) {
  std::vector<double> g(static_cast<std::size_t>(o.window));
  const double r = (o.window - 1) / 2.0;
  double sum = 0.0;
  for (int i = 0; i < o.window; ++i) sum += g[i] = std::exp(-(i - r) * (i - r) / (2.0 * o.sigma * o.sigma));
  for (double& v : g) v /= sum;
  return g;
}

// Separable valid-mode correlation: (h, w) -> (h-L+1, w-L+1).
std::vector<double> filter_valid(std::span<const double> in, int h, int w, const std::vector<double>& g) {
  const int L = static_cast<int>(g.size()), ho = h - L + 1, wo = w - L + 1;
  std::vector<double> tmp(static_cast<std::size_t>(h) * wo, 0.0), out(static_cast<std::size_t>(ho) * wo, 0.0);
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < wo; ++x) {
      double s = 0.0;
      for (int i = 0; i < L; ++i) s += g[i] * in[y * w + x + i];
      tmp[y * wo + x] = s;
    }
  for (int y = 0; y < ho; ++y)
    for (int x = 0; x < wo; ++x) {
      double s = 0.0;
      for (int i = 0; i < L; ++i) s += g[i] * tmp[(y + i) * wo + x];
      out[y * wo + x] = s;
    }
  return out;
}

// Adjoint of filter_valid: (h-L+1, w-L+1) -> (h, w).
std::vector<double> filter_valid_adjoint(const std::vector<double>& gin, int h, int w,
                                         const std::vector<double>& g) {
  const int L = static_cast<int>(g.size()), ho = h - L + 1, wo = w - L + 1;
  std::vector<double> tmp(static_cast<std::size_t>(h) * wo, 0.0), out(static_cast<std::size_t>(h) * w, 0.0);
  for (int y = 0; y < ho; ++y)
    for (int x = 0; x < wo; ++x)
      for (int i = 0; i < L; ++i) tmp[(y + i) * wo + x] += g[i] * gin[y * wo + x];
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < wo; ++x)
      for (int i = 0; i < L; ++i) out[y * w + x + i] += g[i] * tmp[y * wo + x];
  return out;
}

void check_batch_pair(const Tensor& x, const Tensor& y, const char* what) {
  if (x.channels != y.channels || x.batch != y.batch || x.height != y.height || x.width != y.width)
    throw ShapeError(std::string(what) + ": batch shapes differ");
  if (x.batch < 1) throw ArgumentError(std::string(what) + ": empty batch");
}

}  // namespace

double ssim_plane(std::span<const double> x, std::span<const double> y, int height, int width,
                  const SsimOptions& opts, std::span<double> grad_y) {
  if (opts.window < 1 || opts.window % 2 == 0) throw ArgumentError("SSIM window must be odd and positive");
  if (height < opts.window || width < opts.window)
    throw ArgumentError("image " + std::to_string(height) + "x" + std::to_string(width) +
                        " is smaller than the " + std::to_string(opts.window) + "x" +
                        std::to_string(opts.window) + " SSIM window");
  const auto n = static_cast<std::size_t>(height) * width;
  if (x.size() != n || y.size() != n) throw ShapeError("ssim: plane sizes differ");
  const double c1 = (opts.k1) * (opts.k1), c2 = (opts.k2) * (opts.k2);
  const auto g = gaussian_kernel(opts);

  std::vector<double> xx(n), yy(n), xy(n);
  for (std::size_t i = 0; i < n; ++i) {
    xx[i] = x[i] * x[i];
    yy[i] = y[i] * y[i];
    xy[i] = x[i] * y[i];
  }
  const auto mux = filter_valid(x, height, width, g);
  const auto muy = filter_valid(y, height, width, g);
  const auto exx = filter_valid(xx, height, width, g);
  const auto eyy = filter_valid(yy, height, width, g);
  const auto exy = filter_valid(xy, height, width, g);
  const std::size_t m = mux.size();

  const bool want_grad = !grad_y.empty();
  std::vector<double> g_mu, g_exy, g_eyy;
  if (want_grad) {
    g_mu.resize(m);
    g_exy.resize(m);
    g_eyy.resize(m);
  }
  double total = 0.0;
  for (std::size_t q = 0; q < m; ++q) {
    const double sxx = exx[q] - mux[q] * mux[q];
    const double syy = eyy[q] - muy[q] * muy[q];
    const double sxy = exy[q] - mux[q] * muy[q];
    const double a1 = 2.0 * mux[q] * muy[q] + c1, a2 = 2.0 * sxy + c2;
    const double b1 = mux[q] * mux[q] + muy[q] * muy[q] + c1, b2 = sxx + syy + c2;
    const double s = a1 * a2 / (b1 * b2);
    total += s;
    if (want_grad) {
      const double d_mu = 2.0 * mux[q] * a2 / (b1 * b2) - s * 2.0 * muy[q] / b1;
      const double d_sxy = 2.0 * a1 / (b1 * b2);
      const double d_syy = -s / b2;
      g_mu[q] = d_mu - mux[q] * d_sxy - 2.0 * muy[q] * d_syy;
      g_exy[q] = d_sxy;
      g_eyy[q] = d_syy;
    }
  }
  const double inv_m = 1.0 / static_cast<double>(m);
  if (want_grad) {
    if (grad_y.size() != n) throw ShapeError("ssim: gradient buffer has wrong size");
    const auto a_mu = filter_valid_adjoint(g_mu, height, width, g);
    const auto a_xy = filter_valid_adjoint(g_exy, height, width, g);
    const auto a_yy = filter_valid_adjoint(g_eyy, height, width, g);
    for (std::size_t p = 0; p < n; ++p)
      grad_y[p] = inv_m * (a_mu[p] + x[p] * a_xy[p] + 2.0 * y[p] * a_yy[p]);
  }
  return total * inv_m;
}

double ssim_index(const Image& x, const Image& y, Channel channel, const SsimOptions& opts) {
  if (!x.same_shape(y)) throw ShapeError("ssim_index: image shapes differ");
  const int k = static_cast<int>(channel);
  if (k >= x.channels) throw ArgumentError("ssim_index: channel out of range");
  std::vector<double> px(static_cast<std::size_t>(x.height) * x.width), py(px.size());
  for (int r = 0; r < x.height; ++r)
    for (int c = 0; c < x.width; ++c) {
      px[r * x.width + c] = x.at(r, c, k);
      py[r * x.width + c] = y.at(r, c, k);
    }
  return ssim_plane(px, py, x.height, x.width, opts);
}

double ssim_rgb(const Image& x, const Image& y, const SsimOptions& opts) {
  return (ssim_index(x, y, Channel::R, opts) + ssim_index(x, y, Channel::G, opts) +
          ssim_index(x, y, Channel::B, opts)) /
         3.0;
}

double mse_loss(const Tensor& x, const Tensor& y, NormalizationMode mode, Tensor* grad_y) {
  check_batch_pair(x, y, "mse_loss");
  const double scale = mode == NormalizationMode::paper_sum ? 1.0 : 1.0 / static_cast<double>(x.size());
  double s = 0.0;
  for (std::size_t i = 0; i < x.size(); ++i) s += (y.data[i] - x.data[i]) * (y.data[i] - x.data[i]);
  if (grad_y) {
    *grad_y = Tensor(y.channels, y.batch, y.height, y.width);
    for (std::size_t i = 0; i < x.size(); ++i) grad_y->data[i] = 2.0 * scale * (y.data[i] - x.data[i]);
  }
  return s * scale;
}

double ssim_loss(const Tensor& x, const Tensor& y, NormalizationMode mode, const SsimOptions& opts,
                 Tensor* grad_y) {
  check_batch_pair(x, y, "ssim_loss");
  if (x.channels != 3) throw ShapeError("ssim_loss expects RGB batches");
  const double scale = mode == NormalizationMode::paper_sum ? 1.0 : 1.0 / (3.0 * x.batch);
  if (grad_y) *grad_y = Tensor(y.channels, y.batch, y.height, y.width);
  double s = 0.0;
  for (int c = 0; c < 3; ++c)
    for (int n = 0; n < x.batch; ++n) {
      std::span<double> g;
      if (grad_y) g = grad_y->plane(c, n);
      s += ssim_plane(x.plane(c, n), y.plane(c, n), x.height, x.width, opts, g);
      for (double& v : g) v *= -scale;
    }
  return -s * scale;
}

LatentBatch encode_batch(const Encoder& enc, const Tensor& images) {
  return {enc.forward(images), enc.digest()};
}

double dsim_loss(const Encoder& enc, const Tensor& y, const LatentBatch& z, NormalizationMode mode,
                 Tensor* grad_y) {
  if (z.source_digest != enc.digest())
    throw ProvenanceError("dsim_loss: latents were produced by a different encoder");
  nn::Tape tape;
  const Tensor ey = enc.forward(y, grad_y ? &tape : nullptr);
  if (ey.dims() != z.values.dims() || ey.batch != z.values.batch)
    throw ShapeError("dsim_loss: latent batch shape does not match encoder output");
  double scale = 1.0;
  if (mode == NormalizationMode::mean) scale = 1.0 / static_cast<double>(ey.size());
  if (mode == NormalizationMode::relative) {
    double energy = 0.0;
    for (double v : z.values.data) energy += v * v;
    scale = energy > 0.0 ? 1.0 / energy : 1.0 / static_cast<double>(ey.size());
  }
  double s = 0.0;
  Tensor g(ey.channels, ey.batch, ey.height, ey.width);
  for (std::size_t i = 0; i < ey.size(); ++i) {
    const double d = ey.data[i] - z.values.data[i];
    s += d * d;
    g.data[i] = 2.0 * scale * d;
  }
  if (grad_y) *grad_y = enc.backward_to_input(tape, g);
  return s * scale;
}

double composite_loss(const LossWeights& w, double mse, double ssim, double dsim) {
  w.validate();
  return w.mse * mse + w.ssim * ssim + w.dsim * dsim;
}

double mse_loss(std::span<const Image> x, std::span<const Image> y, NormalizationMode mode) {
  if (x.size() != y.size()) throw ShapeError("mse_loss: batch sizes differ");
  return mse_loss(to_tensor(x), to_tensor(y), mode);
}

double ssim_loss(std::span<const Image> x, std::span<const Image> y, NormalizationMode mode,
                 const SsimOptions& opts) {
  if (x.size() != y.size()) throw ShapeError("ssim_loss: batch sizes differ");
  return ssim_loss(to_tensor(x), to_tensor(y), mode, opts);
}

}  // namespace pv
