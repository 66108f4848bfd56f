#pragma once

#include <memory>
#include <random>
#include <span>
#include <string>
#include <vector>

#include "pv/tensor.hpp"

namespace pv::nn {

enum class Mode { eval, train };

enum class Activation { linear, relu, leaky_relu, sigmoid };

Activation parse_activation(const std::string& name);
std::string to_string(Activation a);

/// What a layer remembers from one forward pass so it can run backward later.
/// Layers are immutable during forward/backward; all per-call state lives here.
struct LayerCache {
  Mode mode = Mode::eval;
  Tensor input;
  Tensor output;
  Buffer aux;
};

class Layer {
 public:
  explicit Layer(std::string id) : id_(std::move(id)) {}
  virtual ~Layer() = default;

  const std::string& id() const { return id_; }
  virtual std::string kind() const = 0;
  virtual Dims output_dims(const Dims& in) const = 0;

  /// `cache` may be null for pure inference.
  virtual Tensor forward(const Tensor& x, Mode mode, LayerCache* cache) const = 0;

  /// Accumulates parameter gradients into `param_grad` (skipped when empty)
  /// and returns dL/dinput unless `need_input_grad` is false.
  virtual Tensor backward(const LayerCache& cache, const Tensor& grad_out,
                          std::span<double> param_grad, bool need_input_grad) const = 0;

  /// Folds training-mode batch statistics into persistent buffers.
  virtual void commit(const LayerCache& /*cache*/) {}

  virtual void initialize(std::mt19937_64& /*rng*/) {}

  /// True for layers that double spatial resolution.
  virtual bool upsamples() const { return false; }

  std::span<double> params() { return params_; }
  std::span<const double> params() const { return params_; }
  std::span<double> buffers() { return buffers_; }
  std::span<const double> buffers() const { return buffers_; }

 protected:
  Buffer params_;
  Buffer buffers_;

 private:
  std::string id_;
};

/// Square-kernel convolution with "same"-style padding k/2 and fused activation.
class Conv2d final : public Layer {
 public:
  Conv2d(std::string id, int in_channels, int out_channels, int kernel, int stride,
         Activation act, double slope = 0.2);

  std::string kind() const override { return "conv2d"; }
  Dims output_dims(const Dims& in) const override;
  Tensor forward(const Tensor& x, Mode mode, LayerCache* cache) const override;
  Tensor backward(const LayerCache& cache, const Tensor& grad_out, std::span<double> param_grad,
                  bool need_input_grad) const override;
  void initialize(std::mt19937_64& rng) override;

  int in_channels() const { return in_; }
  int out_channels() const { return out_; }
  int kernel() const { return k_; }
  int stride() const { return stride_; }
  Activation activation() const { return act_; }

 private:
  int in_, out_, k_, stride_, pad_;
  Activation act_;
  double slope_;
};

/// Transposed convolution doubling resolution exactly (kernel k, stride 2,
/// padding k/2, output padding 1).
class ConvTranspose2d final : public Layer {
 public:
  ConvTranspose2d(std::string id, int in_channels, int out_channels, int kernel,
                  Activation act = Activation::linear, double slope = 0.2);

  std::string kind() const override { return "conv_transpose2d"; }
  Dims output_dims(const Dims& in) const override;
  Tensor forward(const Tensor& x, Mode mode, LayerCache* cache) const override;
  Tensor backward(const LayerCache& cache, const Tensor& grad_out, std::span<double> param_grad,
                  bool need_input_grad) const override;
  void initialize(std::mt19937_64& rng) override;
  bool upsamples() const override { return true; }

  Activation activation() const { return act_; }

 private:
  int in_, out_, k_, pad_;
  Activation act_;
  double slope_;
};

/// Per-channel batch normalization. Train mode uses batch statistics; eval
/// mode uses the stored running statistics.
class BatchNorm2d final : public Layer {
 public:
  BatchNorm2d(std::string id, int channels, double eps = 1e-5, double momentum = 0.1);

  std::string kind() const override { return "batch_norm"; }
  Dims output_dims(const Dims& in) const override;
  Tensor forward(const Tensor& x, Mode mode, LayerCache* cache) const override;
  Tensor backward(const LayerCache& cache, const Tensor& grad_out, std::span<double> param_grad,
                  bool need_input_grad) const override;
  void commit(const LayerCache& cache) override;
  void initialize(std::mt19937_64& rng) override;

 private:
  int channels_;
  double eps_, momentum_;
};

/// Standalone activation. `softmax` normalizes across channels at each position.
class ActivationLayer final : public Layer {
 public:
  enum class Kind { relu, leaky_relu, sigmoid, softmax };
  ActivationLayer(std::string id, Kind kind, double slope = 0.2);

  std::string kind() const override;
  Dims output_dims(const Dims& in) const override { return in; }
  Tensor forward(const Tensor& x, Mode mode, LayerCache* cache) const override;
  Tensor backward(const LayerCache& cache, const Tensor& grad_out, std::span<double> param_grad,
                  bool need_input_grad) const override;

  Kind activation_kind() const { return kind_; }

 private:
  Kind kind_;
  double slope_;
};

class GlobalAvgPool final : public Layer {
 public:
  explicit GlobalAvgPool(std::string id) : Layer(std::move(id)) {}
  std::string kind() const override { return "global_avg_pool"; }
  Dims output_dims(const Dims& in) const override { return {in.channels, 1, 1}; }
  Tensor forward(const Tensor& x, Mode mode, LayerCache* cache) const override;
  Tensor backward(const LayerCache& cache, const Tensor& grad_out, std::span<double> param_grad,
                  bool need_input_grad) const override;
};

/// Fully connected layer over the flattened (c, y, x) features of each sample.
class Dense final : public Layer {
 public:
  Dense(std::string id, int in_features, int out_features, Activation act = Activation::linear,
        double slope = 0.2);

  std::string kind() const override { return "dense"; }
  Dims output_dims(const Dims& in) const override;
  Tensor forward(const Tensor& x, Mode mode, LayerCache* cache) const override;
  Tensor backward(const LayerCache& cache, const Tensor& grad_out, std::span<double> param_grad,
                  bool need_input_grad) const override;
  void initialize(std::mt19937_64& rng) override;

  int in_features() const { return in_; }
  int out_features() const { return out_; }
  Activation activation() const { return act_; }

 private:
  int in_, out_;
  Activation act_;
  double slope_;
};

class CenterCrop final : public Layer {
 public:
  CenterCrop(std::string id, int height, int width);
  std::string kind() const override { return "center_crop"; }
  Dims output_dims(const Dims& in) const override;
  Tensor forward(const Tensor& x, Mode mode, LayerCache* cache) const override;
  Tensor backward(const LayerCache& cache, const Tensor& grad_out, std::span<double> param_grad,
                  bool need_input_grad) const override;

 private:
  int height_, width_;
};

}  // namespace pv::nn
