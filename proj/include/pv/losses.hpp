#pragma once

#include <span>
#include <string>

#include <nlohmann/json.hpp>

#include "pv/model_core.hpp"
#include "pv/tensor.hpp"

namespace pv {

/// paper_sum: literal batch sums. mean: sums divided by element count
/// (mse, dsim) or by 3b (ssim), so a perfect SSIM loss is -1. relative: as
/// mean for mse and ssim; dsim is divided by the batch latent energy sum z^2
/// instead, which makes it independent of the encoder's activation scale.
enum class NormalizationMode { paper_sum, mean, relative };

std::string to_string(NormalizationMode m);
NormalizationMode parse_normalization_mode(const std::string& s);

/// Composite-loss weights; non-negative and summing to one.
struct LossWeights {
  double mse = 0.2;
  double ssim = 0.4;
  double dsim = 0.4;

  void validate() const;
  friend bool operator==(const LossWeights&, const LossWeights&) = default;
};

struct LossReport {
  double mse = 0.0;
  double ssim_loss = 0.0;
  double dsim = 0.0;
  double composite = 0.0;
  NormalizationMode mode = NormalizationMode::mean;
  int batch_size = 0;

  /// One training-log line: {step, mse, ssim_loss, dsim, composite, mode}.
  nlohmann::json to_json(long long step) const;
  static LossReport from_json(const nlohmann::json& j);
};

/// Gaussian-window SSIM settings; dynamic range 1.
struct SsimOptions {
  int window = 11;
  double sigma = 1.5;
  double k1 = 0.01;
  double k2 = 0.03;
};

enum class Channel { R = 0, G = 1, B = 2 };

/// Mean local SSIM of one H x W plane pair over all fully-contained windows.
/// When `grad_y` is non-empty it receives d SSIM / d y.
double ssim_plane(std::span<const double> x, std::span<const double> y, int height, int width,
                  const SsimOptions& opts = {}, std::span<double> grad_y = {});

double ssim_index(const Image& x, const Image& y, Channel channel, const SsimOptions& opts = {});
/// Mean of the three per-channel indices.
double ssim_rgb(const Image& x, const Image& y, const SsimOptions& opts = {});

/// Batch losses over (3, b, h, w) tensors; X is the reference, Y the
/// reconstruction. Gradients are with respect to Y.
double mse_loss(const Tensor& x, const Tensor& y, NormalizationMode mode, Tensor* grad_y = nullptr);
double ssim_loss(const Tensor& x, const Tensor& y, NormalizationMode mode, const SsimOptions& opts = {},
                 Tensor* grad_y = nullptr);

/// Latent batch with the digest of the encoder that produced it.
struct LatentBatch {
  Tensor values;
  std::string source_digest;
};

LatentBatch encode_batch(const Encoder& enc, const Tensor& images);

/// sum |E(y) - z|^2. Gradients flow into Y only; the encoder is never updated.
double dsim_loss(const Encoder& enc, const Tensor& y, const LatentBatch& z, NormalizationMode mode,
                 Tensor* grad_y = nullptr);

double composite_loss(const LossWeights& w, double mse, double ssim, double dsim);

/// Convenience wrappers over image lists.
double mse_loss(std::span<const Image> x, std::span<const Image> y, NormalizationMode mode);
double ssim_loss(std::span<const Image> x, std::span<const Image> y, NormalizationMode mode,
                 const SsimOptions& opts = {});

}  // namespace pv
