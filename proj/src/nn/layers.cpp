#include "pv/nn/layers.hpp"

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>

#include "pv/errors.hpp"

namespace pv::nn {
namespace {

using Matrix = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using MatrixMap = Eigen::Map<Matrix>;
using ConstMatrixMap = Eigen::Map<const Matrix>;
using VectorMap = Eigen::Map<Eigen::VectorXd>;

int conv_out(int in, int k, int stride, int pad) { return (in + 2 * pad - k) / stride + 1; }

// Unfolds (C, N, H, W) into a (C*k*k, N*Ho*Wo) patch matrix.
Matrix im2col(const Tensor& x, int k, int stride, int pad, int ho, int wo) {
  const int n = x.batch, h = x.height, w = x.width;
  Matrix cols(static_cast<Eigen::Index>(x.channels) * k * k, static_cast<Eigen::Index>(n) * ho * wo);
  for (int c = 0; c < x.channels; ++c)
    for (int ky = 0; ky < k; ++ky)
      for (int kx = 0; kx < k; ++kx) {
        double* row = cols.row((c * k + ky) * k + kx).data();
        for (int s = 0; s < n; ++s) {
          const double* src = x.plane(c, s).data();
          for (int oy = 0; oy < ho; ++oy) {
            const int iy = oy * stride - pad + ky;
            double* dst = row + (static_cast<std::size_t>(s) * ho + oy) * wo;
            if (iy < 0 || iy >= h) {
              std::fill(dst, dst + wo, 0.0);
              continue;
            }
            for (int ox = 0; ox < wo; ++ox) {
              const int ix = ox * stride - pad + kx;
              dst[ox] = (ix < 0 || ix >= w) ? 0.0 : src[iy * w + ix];
            }
          }
        }
      }
  return cols;
}

// Adjoint of im2col: scatters-adds patches back into a (C, N, H, W) tensor.
Tensor col2im(const Matrix& cols, int channels, int n, int h, int w, int k, int stride, int pad,
              int ho, int wo) {
  Tensor out(channels, n, h, w);
  for (int c = 0; c < channels; ++c)
    for (int ky = 0; ky < k; ++ky)
      for (int kx = 0; kx < k; ++kx) {
        const double* row = cols.row((c * k + ky) * k + kx).data();
        for (int s = 0; s < n; ++s) {
          double* dst = out.plane(c, s).data();
          for (int oy = 0; oy < ho; ++oy) {
            const int iy = oy * stride - pad + ky;
            if (iy < 0 || iy >= h) continue;
            const double* src = row + (static_cast<std::size_t>(s) * ho + oy) * wo;
            for (int ox = 0; ox < wo; ++ox) {
              const int ix = ox * stride - pad + kx;
              if (ix >= 0 && ix < w) dst[iy * w + ix] += src[ox];
            }
          }
        }
      }
  return out;
}

void apply_activation(std::span<double> v, Activation act, double slope) {
  switch (act) {
    case Activation::linear: break;
    case Activation::relu:
      for (double& x : v) x = x > 0.0 ? x : 0.0;
      break;
    case Activation::leaky_relu:
      for (double& x : v) x = x > 0.0 ? x : slope * x;
      break;
    case Activation::sigmoid:
      for (double& x : v) x = 1.0 / (1.0 + std::exp(-x));
      break;
  }
}

// Multiplies `grad` by the activation derivative, expressed through the output.
void activation_backward(std::span<double> grad, std::span<const double> out, Activation act,
                         double slope) {
  switch (act) {
    case Activation::linear: break;
    case Activation::relu:
      for (std::size_t i = 0; i < grad.size(); ++i)
        if (!(out[i] > 0.0)) grad[i] = 0.0;
      break;
    case Activation::leaky_relu:
      for (std::size_t i = 0; i < grad.size(); ++i)
        if (!(out[i] > 0.0)) grad[i] *= slope;
      break;
    case Activation::sigmoid:
      for (std::size_t i = 0; i < grad.size(); ++i) grad[i] *= out[i] * (1.0 - out[i]);
      break;
  }
}

void he_normal(std::span<double> w, int fan_in, std::mt19937_64& rng) {
  std::normal_distribution<double> dist(0.0, std::sqrt(2.0 / fan_in));
  for (double& v : w) v = dist(rng);
}

void check_channels(int got, int expected, const std::string& id) {
  if (got != expected)
    throw ShapeError("layer '" + id + "': expected " + std::to_string(expected) +
                     " input channels, got " + std::to_string(got));
}

void check_channels(const Tensor& x, int expected, const std::string& id) { check_channels(x.channels, expected, id); }

}  // namespace

Activation parse_activation(const std::string& name) {
  if (name == "linear" || name.empty()) return Activation::linear;
  if (name == "relu") return Activation::relu;
  if (name == "leaky_relu") return Activation::leaky_relu;
  if (name == "sigmoid") return Activation::sigmoid;
  throw ConfigError("unknown activation '" + name + "'");
}

std::string to_string(Activation a) {
  switch (a) {
    case Activation::linear: return "linear";
    case Activation::relu: return "relu";
    case Activation::leaky_relu: return "leaky_relu";
    case Activation::sigmoid: return "sigmoid";
  }
  return "linear";
}

// ---------------------------------------------------------------- Conv2d

Conv2d::Conv2d(std::string id, int in_channels, int out_channels, int kernel, int stride,
               Activation act, double slope)
    : Layer(std::move(id)), in_(in_channels), out_(out_channels), k_(kernel), stride_(stride),
      pad_(kernel / 2), act_(act), slope_(slope) {
  if (in_ <= 0 || out_ <= 0 || k_ <= 0 || stride_ <= 0)
    throw ConfigError("conv2d '" + this->id() + "': non-positive geometry");
  params_.assign(static_cast<std::size_t>(out_) * in_ * k_ * k_ + out_, 0.0);
}

Dims Conv2d::output_dims(const Dims& in) const {
  check_channels(in.channels, in_, id());
  return {out_, conv_out(in.height, k_, stride_, pad_), conv_out(in.width, k_, stride_, pad_)};
}

Tensor Conv2d::forward(const Tensor& x, Mode mode, LayerCache* cache) const {
  check_channels(x, in_, id());
  const Dims od = output_dims(x.dims());
  const Matrix cols = im2col(x, k_, stride_, pad_, od.height, od.width);
  Tensor y(out_, x.batch, od.height, od.width);
  ConstMatrixMap w(params_.data(), out_, static_cast<Eigen::Index>(in_) * k_ * k_);
  MatrixMap ym(y.data.data(), out_, cols.cols());
  ym.noalias() = w * cols;
  const double* bias = params_.data() + static_cast<std::size_t>(out_) * in_ * k_ * k_;
  for (int c = 0; c < out_; ++c) ym.row(c).array() += bias[c];
  apply_activation(y.data, act_, slope_);
  if (cache) {
    cache->mode = mode;
    cache->input = x;
    cache->output = y;
  }
  return y;
}

Tensor Conv2d::backward(const LayerCache& cache, const Tensor& grad_out,
                        std::span<double> param_grad, bool need_input_grad) const {
  Tensor g = grad_out;
  activation_backward(g.data, cache.output.data, act_, slope_);
  const Tensor& x = cache.input;
  const Matrix cols = im2col(x, k_, stride_, pad_, g.height, g.width);
  ConstMatrixMap gm(g.data.data(), out_, cols.cols());
  const auto wsize = static_cast<Eigen::Index>(in_) * k_ * k_;
  if (!param_grad.empty()) {
    MatrixMap dw(param_grad.data(), out_, wsize);
    dw.noalias() += gm * cols.transpose();
    VectorMap db(param_grad.data() + out_ * wsize, out_);
    db += gm.rowwise().sum();
  }
  if (!need_input_grad) return {};
  ConstMatrixMap w(params_.data(), out_, wsize);
  const Matrix dcols = w.transpose() * gm;
  return col2im(dcols, in_, x.batch, x.height, x.width, k_, stride_, pad_, g.height, g.width);
}

void Conv2d::initialize(std::mt19937_64& rng) {
  const std::size_t nw = static_cast<std::size_t>(out_) * in_ * k_ * k_;
  he_normal(std::span(params_).first(nw), in_ * k_ * k_, rng);
  std::fill(params_.begin() + static_cast<std::ptrdiff_t>(nw), params_.end(), 0.0);
}

// ------------------------------------------------------- ConvTranspose2d

ConvTranspose2d::ConvTranspose2d(std::string id, int in_channels, int out_channels, int kernel,
                                 Activation act, double slope)
    : Layer(std::move(id)), in_(in_channels), out_(out_channels), k_(kernel), pad_(kernel / 2),
      act_(act), slope_(slope) {
  if (in_ <= 0 || out_ <= 0 || k_ <= 0 || k_ % 2 == 0)
    throw ConfigError("conv_transpose2d '" + this->id() + "': kernel must be odd and positive");
  params_.assign(static_cast<std::size_t>(in_) * out_ * k_ * k_ + out_, 0.0);
}

Dims ConvTranspose2d::output_dims(const Dims& in) const {
  check_channels(in.channels, in_, id());
  return {out_, 2 * in.height, 2 * in.width};
}

// The forward pass is the input-gradient of a stride-2 convolution mapping the
// (2H, 2W) output grid onto the (H, W) input grid.
Tensor ConvTranspose2d::forward(const Tensor& x, Mode mode, LayerCache* cache) const {
  check_channels(x, in_, id());
  const int ho = 2 * x.height, wo = 2 * x.width;
  const auto wcols = static_cast<Eigen::Index>(out_) * k_ * k_;
  ConstMatrixMap w(params_.data(), in_, wcols);
  ConstMatrixMap xm(x.data.data(), in_, static_cast<Eigen::Index>(x.batch) * x.plane());
  const Matrix cols = w.transpose() * xm;
  Tensor y = col2im(cols, out_, x.batch, ho, wo, k_, 2, pad_, x.height, x.width);
  const double* bias = params_.data() + static_cast<std::size_t>(in_) * wcols;
  MatrixMap ym(y.data.data(), out_, static_cast<Eigen::Index>(x.batch) * ho * wo);
  for (int c = 0; c < out_; ++c) ym.row(c).array() += bias[c];
  apply_activation(y.data, act_, slope_);
  if (cache) {
    cache->mode = mode;
    cache->input = x;
    cache->output = y;
  }
  return y;
}

Tensor ConvTranspose2d::backward(const LayerCache& cache, const Tensor& grad_out,
                                 std::span<double> param_grad, bool need_input_grad) const {
  Tensor g = grad_out;
  activation_backward(g.data, cache.output.data, act_, slope_);
  const Tensor& x = cache.input;
  const Matrix gcols = im2col(g, k_, 2, pad_, x.height, x.width);
  const auto wcols = static_cast<Eigen::Index>(out_) * k_ * k_;
  ConstMatrixMap xm(x.data.data(), in_, static_cast<Eigen::Index>(x.batch) * x.plane());
  if (!param_grad.empty()) {
    MatrixMap dw(param_grad.data(), in_, wcols);
    dw.noalias() += xm * gcols.transpose();
    ConstMatrixMap gm(g.data.data(), out_, static_cast<Eigen::Index>(g.batch) * g.plane());
    VectorMap db(param_grad.data() + in_ * wcols, out_);
    db += gm.rowwise().sum();
  }
  if (!need_input_grad) return {};
  ConstMatrixMap w(params_.data(), in_, wcols);
  Tensor dx(in_, x.batch, x.height, x.width);
  MatrixMap dxm(dx.data.data(), in_, xm.cols());
  dxm.noalias() = w * gcols;
  return dx;
}

void ConvTranspose2d::initialize(std::mt19937_64& rng) {
  const std::size_t nw = static_cast<std::size_t>(in_) * out_ * k_ * k_;
  // Each output pixel receives on average in*k*k/4 contributions at stride 2.
  he_normal(std::span(params_).first(nw), std::max(1, in_ * k_ * k_ / 4), rng);
  std::fill(params_.begin() + static_cast<std::ptrdiff_t>(nw), params_.end(), 0.0);
}

// ----------------------------------------------------------- BatchNorm2d

BatchNorm2d::BatchNorm2d(std::string id, int channels, double eps, double momentum)
    : Layer(std::move(id)), channels_(channels), eps_(eps), momentum_(momentum) {
  params_.assign(2 * static_cast<std::size_t>(channels_), 0.0);
  buffers_.assign(2 * static_cast<std::size_t>(channels_), 0.0);
  std::fill_n(params_.begin(), channels_, 1.0);
  std::fill_n(buffers_.begin() + channels_, channels_, 1.0);
}

void BatchNorm2d::initialize(std::mt19937_64& /*rng*/) {
  std::fill_n(params_.begin(), channels_, 1.0);
  std::fill_n(params_.begin() + channels_, channels_, 0.0);
  std::fill_n(buffers_.begin(), channels_, 0.0);
  std::fill_n(buffers_.begin() + channels_, channels_, 1.0);
}

Tensor BatchNorm2d::forward(const Tensor& x, Mode mode, LayerCache* cache) const {
  check_channels(x, channels_, id());
  const std::size_t m = static_cast<std::size_t>(x.batch) * x.plane();
  Buffer stats(2 * static_cast<std::size_t>(channels_));  // mean, inv_std
  Tensor y(x.channels, x.batch, x.height, x.width);
  for (int c = 0; c < channels_; ++c) {
    const double* src = x.data.data() + c * m;
    double mean, var;
    if (mode == Mode::train) {
      mean = 0.0;
      for (std::size_t i = 0; i < m; ++i) mean += src[i];
      mean /= static_cast<double>(m);
      var = 0.0;
      for (std::size_t i = 0; i < m; ++i) var += (src[i] - mean) * (src[i] - mean);
      var /= static_cast<double>(m);
    } else {
      mean = buffers_[c];
      var = buffers_[channels_ + c];
    }
    const double inv_std = 1.0 / std::sqrt(var + eps_);
    stats[c] = mean;
    stats[channels_ + c] = inv_std;
    const double gamma = params_[c], beta = params_[channels_ + c];
    double* dst = y.data.data() + c * m;
    for (std::size_t i = 0; i < m; ++i) dst[i] = gamma * (src[i] - mean) * inv_std + beta;
  }
  if (cache) {
    cache->mode = mode;
    cache->input = x;
    cache->output = y;
    cache->aux = std::move(stats);
  }
  return y;
}

Tensor BatchNorm2d::backward(const LayerCache& cache, const Tensor& grad_out,
                             std::span<double> param_grad, bool need_input_grad) const {
  const Tensor& x = cache.input;
  const std::size_t m = static_cast<std::size_t>(x.batch) * x.plane();
  Tensor dx(x.channels, x.batch, x.height, x.width);
  for (int c = 0; c < channels_; ++c) {
    const double mean = cache.aux[c], inv_std = cache.aux[channels_ + c];
    const double gamma = params_[c];
    const double* src = x.data.data() + c * m;
    const double* g = grad_out.data.data() + c * m;
    double sum_g = 0.0, sum_gx = 0.0;
    for (std::size_t i = 0; i < m; ++i) {
      sum_g += g[i];
      sum_gx += g[i] * (src[i] - mean) * inv_std;
    }
    if (!param_grad.empty()) {
      param_grad[c] += sum_gx;
      param_grad[channels_ + c] += sum_g;
    }
    if (!need_input_grad) continue;
    double* d = dx.data.data() + c * m;
    if (cache.mode == Mode::train) {
      const double md = static_cast<double>(m);
      for (std::size_t i = 0; i < m; ++i) {
        const double xhat = (src[i] - mean) * inv_std;
        d[i] = gamma * inv_std * (g[i] - sum_g / md - xhat * sum_gx / md);
      }
    } else {
      for (std::size_t i = 0; i < m; ++i) d[i] = gamma * inv_std * g[i];
    }
  }
  return need_input_grad ? dx : Tensor{};
}

void BatchNorm2d::commit(const LayerCache& cache) {
  if (cache.mode != Mode::train) return;
  const Tensor& x = cache.input;
  const double m = static_cast<double>(x.batch) * static_cast<double>(x.plane());
  for (int c = 0; c < channels_; ++c) {
    const double mean = cache.aux[c], inv_std = cache.aux[channels_ + c];
    const double var = 1.0 / (inv_std * inv_std) - eps_;
    const double unbiased = m > 1.0 ? var * m / (m - 1.0) : var;
    buffers_[c] = (1.0 - momentum_) * buffers_[c] + momentum_ * mean;
    buffers_[channels_ + c] = (1.0 - momentum_) * buffers_[channels_ + c] + momentum_ * unbiased;
  }
}

// ------------------------------------------------------- ActivationLayer

ActivationLayer::ActivationLayer(std::string id, Kind kind, double slope)
    : Layer(std::move(id)), kind_(kind), slope_(slope) {}

std::string ActivationLayer::kind() const {
  switch (kind_) {
    case Kind::relu: return "relu";
    case Kind::leaky_relu: return "leaky_relu";
    case Kind::sigmoid: return "sigmoid";
    case Kind::softmax: return "softmax";
  }
  return "activation";
}

Tensor ActivationLayer::forward(const Tensor& x, Mode mode, LayerCache* cache) const {
  Tensor y = x;
  switch (kind_) {
    case Kind::relu: apply_activation(y.data, Activation::relu, slope_); break;
    case Kind::leaky_relu: apply_activation(y.data, Activation::leaky_relu, slope_); break;
    case Kind::sigmoid: apply_activation(y.data, Activation::sigmoid, slope_); break;
    case Kind::softmax:
      for (int n = 0; n < x.batch; ++n)
        for (std::size_t p = 0; p < x.plane(); ++p) {
          double mx = -INFINITY;
          for (int c = 0; c < x.channels; ++c) mx = std::max(mx, x.plane(c, n)[p]);
          double sum = 0.0;
          for (int c = 0; c < x.channels; ++c) sum += (y.plane(c, n)[p] = std::exp(x.plane(c, n)[p] - mx));
          for (int c = 0; c < x.channels; ++c) y.plane(c, n)[p] /= sum;
        }
      break;
  }
  if (cache) {
    cache->mode = mode;
    cache->output = y;
  }
  return y;
}

Tensor ActivationLayer::backward(const LayerCache& cache, const Tensor& grad_out,
                                 std::span<double> /*param_grad*/, bool need_input_grad) const {
  if (!need_input_grad) return {};
  Tensor g = grad_out;
  const Tensor& y = cache.output;
  switch (kind_) {
    case Kind::relu: activation_backward(g.data, y.data, Activation::relu, slope_); break;
    case Kind::leaky_relu: activation_backward(g.data, y.data, Activation::leaky_relu, slope_); break;
    case Kind::sigmoid: activation_backward(g.data, y.data, Activation::sigmoid, slope_); break;
    case Kind::softmax:
      for (int n = 0; n < y.batch; ++n)
        for (std::size_t p = 0; p < y.plane(); ++p) {
          double dot = 0.0;
          for (int c = 0; c < y.channels; ++c) dot += grad_out.plane(c, n)[p] * y.plane(c, n)[p];
          for (int c = 0; c < y.channels; ++c)
            g.plane(c, n)[p] = y.plane(c, n)[p] * (grad_out.plane(c, n)[p] - dot);
        }
      break;
  }
  return g;
}

// --------------------------------------------------------- GlobalAvgPool

Tensor GlobalAvgPool::forward(const Tensor& x, Mode mode, LayerCache* cache) const {
  Tensor y(x.channels, x.batch, 1, 1);
  const double inv = 1.0 / static_cast<double>(x.plane());
  for (int c = 0; c < x.channels; ++c)
    for (int n = 0; n < x.batch; ++n) {
      double s = 0.0;
      for (double v : x.plane(c, n)) s += v;
      y.at(c, n, 0, 0) = s * inv;
    }
  if (cache) {
    cache->mode = mode;
    cache->input = Tensor(x.channels, x.batch, x.height, x.width);  // only dims are needed
    cache->input.data.clear();
  }
  return y;
}

Tensor GlobalAvgPool::backward(const LayerCache& cache, const Tensor& grad_out,
                               std::span<double> /*param_grad*/, bool need_input_grad) const {
  if (!need_input_grad) return {};
  const Tensor& in = cache.input;
  Tensor dx(in.channels, in.batch, in.height, in.width);
  const double inv = 1.0 / static_cast<double>(dx.plane());
  for (int c = 0; c < dx.channels; ++c)
    for (int n = 0; n < dx.batch; ++n) std::ranges::fill(dx.plane(c, n), grad_out.at(c, n, 0, 0) * inv);
  return dx;
}

// ----------------------------------------------------------------- Dense

Dense::Dense(std::string id, int in_features, int out_features, Activation act, double slope)
    : Layer(std::move(id)), in_(in_features), out_(out_features), act_(act), slope_(slope) {
  if (in_ <= 0 || out_ <= 0) throw ConfigError("dense '" + this->id() + "': non-positive size");
  params_.assign(static_cast<std::size_t>(out_) * in_ + out_, 0.0);
}

Dims BatchNorm2d::output_dims(const Dims& in) const {
  check_channels(in.channels, channels_, id());
  return in;
}

Dims Dense::output_dims(const Dims& in) const {
  if (static_cast<int>(in.count()) != in_)
    throw ShapeError("dense '" + id() + "': expected " + std::to_string(in_) + " features, got " +
                     std::to_string(in.count()));
  return {out_, 1, 1};
}

namespace {
Matrix flatten_features(const Tensor& x) {
  const auto features = static_cast<Eigen::Index>(x.dims().count());
  Matrix f(features, x.batch);
  for (int c = 0; c < x.channels; ++c)
    for (int n = 0; n < x.batch; ++n) {
      auto p = x.plane(c, n);
      for (std::size_t i = 0; i < p.size(); ++i)
        f(static_cast<Eigen::Index>(c * x.plane() + i), n) = p[i];
    }
  return f;
}
}  // namespace

Tensor Dense::forward(const Tensor& x, Mode mode, LayerCache* cache) const {
  (void)output_dims(x.dims());
  const Matrix f = flatten_features(x);
  ConstMatrixMap w(params_.data(), out_, in_);
  Tensor y(out_, x.batch, 1, 1);
  MatrixMap ym(y.data.data(), out_, x.batch);
  ym.noalias() = w * f;
  const double* bias = params_.data() + static_cast<std::size_t>(out_) * in_;
  for (int c = 0; c < out_; ++c) ym.row(c).array() += bias[c];
  apply_activation(y.data, act_, slope_);
  if (cache) {
    cache->mode = mode;
    cache->input = x;
    cache->output = y;
  }
  return y;
}

Tensor Dense::backward(const LayerCache& cache, const Tensor& grad_out,
                       std::span<double> param_grad, bool need_input_grad) const {
  Tensor g = grad_out;
  activation_backward(g.data, cache.output.data, act_, slope_);
  const Tensor& x = cache.input;
  ConstMatrixMap gm(g.data.data(), out_, x.batch);
  if (!param_grad.empty()) {
    const Matrix f = flatten_features(x);
    MatrixMap dw(param_grad.data(), out_, in_);
    dw.noalias() += gm * f.transpose();
    VectorMap db(param_grad.data() + static_cast<std::size_t>(out_) * in_, out_);
    db += gm.rowwise().sum();
  }
  if (!need_input_grad) return {};
  ConstMatrixMap w(params_.data(), out_, in_);
  const Matrix df = w.transpose() * gm;
  Tensor dx(x.channels, x.batch, x.height, x.width);
  for (int c = 0; c < x.channels; ++c)
    for (int n = 0; n < x.batch; ++n) {
      auto p = dx.plane(c, n);
      for (std::size_t i = 0; i < p.size(); ++i)
        p[i] = df(static_cast<Eigen::Index>(c * x.plane() + i), n);
    }
  return dx;
}

void Dense::initialize(std::mt19937_64& rng) {
  const std::size_t nw = static_cast<std::size_t>(out_) * in_;
  std::normal_distribution<double> dist(0.0, std::sqrt(1.0 / in_));
  for (std::size_t i = 0; i < nw; ++i) params_[i] = dist(rng);
  std::fill(params_.begin() + static_cast<std::ptrdiff_t>(nw), params_.end(), 0.0);
}

// ------------------------------------------------------------ CenterCrop

CenterCrop::CenterCrop(std::string id, int height, int width)
    : Layer(std::move(id)), height_(height), width_(width) {}

Dims CenterCrop::output_dims(const Dims& in) const {
  if (in.height < height_ || in.width < width_)
    throw ShapeError("center_crop '" + id() + "': input smaller than crop");
  return {in.channels, height_, width_};
}

Tensor CenterCrop::forward(const Tensor& x, Mode mode, LayerCache* cache) const {
  (void)output_dims(x.dims());
  const int oy = (x.height - height_) / 2, ox = (x.width - width_) / 2;
  Tensor y(x.channels, x.batch, height_, width_);
  for (int c = 0; c < x.channels; ++c)
    for (int n = 0; n < x.batch; ++n)
      for (int yy = 0; yy < height_; ++yy)
        for (int xx = 0; xx < width_; ++xx) y.at(c, n, yy, xx) = x.at(c, n, yy + oy, xx + ox);
  if (cache) {
    cache->mode = mode;
    cache->input = Tensor(x.channels, x.batch, x.height, x.width);
    cache->input.data.clear();
  }
  return y;
}

Tensor CenterCrop::backward(const LayerCache& cache, const Tensor& grad_out,
                            std::span<double> /*param_grad*/, bool need_input_grad) const {
  if (!need_input_grad) return {};
  const Tensor& in = cache.input;
  Tensor dx(in.channels, in.batch, in.height, in.width);
  const int oy = (in.height - height_) / 2, ox = (in.width - width_) / 2;
  for (int c = 0; c < in.channels; ++c)
    for (int n = 0; n < in.batch; ++n)
      for (int yy = 0; yy < height_; ++yy)
        for (int xx = 0; xx < width_; ++xx) dx.at(c, n, yy + oy, xx + ox) = grad_out.at(c, n, yy, xx);
  return dx;
}

}  // namespace pv::nn
