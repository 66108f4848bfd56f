#pragma once

#include <memory>
#include <string>
#include <vector>

#include "pv/model_core.hpp"
#include "pv/tensor.hpp"

namespace pv {

/// Class-discriminative relevance map in [0,1], at input resolution.
struct SaliencyMap {
  Image values;  // height x width x 1
  int class_index = 0;
  std::string backend;
  /// Which class output was differentiated: "logit" or "posterior".
  std::string target;

  std::string digest() const;
};

/// Intermediate Grad-CAM quantities at latent resolution.
struct GradCamTrace {
  std::vector<double> channel_weights;  // spatial mean of d score / d A_k
  Image raw;                            // ReLU(sum_k weight_k * A_k), h~ x w~ x 1
};

/// Pluggable saliency backend. Only Grad-CAM ships.
class SaliencyBackend {
 public:
  virtual ~SaliencyBackend() = default;
  virtual std::string name() const = 0;
  virtual SaliencyMap compute(const ModelBundle& bundle, const Image& x, int class_index) const = 0;
};

class GradCamBackend final : public SaliencyBackend {
 public:
  std::string name() const override { return "grad_cam"; }
  SaliencyMap compute(const ModelBundle& bundle, const Image& x, int class_index) const override;
};

GradCamTrace grad_cam_trace(const ModelBundle& bundle, const Image& x, int class_index);
SaliencyMap grad_cam(const ModelBundle& bundle, const Image& x, int class_index);

/// raw / max(raw), or all zeros when max(raw) == 0. Throws NumericError on
/// NaN and ArgumentError on negative entries.
Image normalize_map(const Image& raw);

/// Bilinear resize of a single-channel map (half-pixel centres, edge clamp).
/// Target must be at least as large as the source in both dimensions.
Image upsample_map(const Image& map, int height, int width);

}  // namespace pv
