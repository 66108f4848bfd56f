#pragma once

#include <memory>
#include <mutex>
#include <set>
#include <span>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "pv/nn/network.hpp"
#include "pv/tensor.hpp"

namespace pv {

/// Architecture descriptor: the JSON file that names the layer stack, the
/// truncation point and the class list of a classifier.
///
///   {"name": "...", "input_shape": [w, h], "class_names": [...],
///    "latent_layer_id": "conv6",
///    "layers": [{"id": "conv1", "type": "conv2d", "filters": 16, "kernel": 3,
///                "stride": 1, "activation": "relu"}, ...]}
///
/// Layer types: conv2d, batch_norm, relu, leaky_relu, sigmoid, softmax,
/// global_avg_pool, dense. The last layer must yield n probabilities.
struct ArchDescriptor {
  std::string name;
  int input_width = 0;
  int input_height = 0;
  std::vector<std::string> class_names;
  std::string latent_layer_id;
  nlohmann::json layers = nlohmann::json::array();

  static ArchDescriptor from_json(const nlohmann::json& j);
  static ArchDescriptor load(const std::string& path);
  nlohmann::json to_json() const;
  void save(const std::string& path) const;
};

/// Builds the (uninitialised) layer stack a descriptor declares.
nn::Network build_network(const ArchDescriptor& desc);

struct ClassScores {
  std::vector<double> posteriors;
};

struct LatentTensor {
  Tensor values;  // (d, 1, h~, w~)
  std::string source_digest;

  Dims dims() const { return values.dims(); }
  std::string digest() const;
};

/// A loaded, frozen classifier. Copies share the same immutable network.
class ModelBundle {
 public:
  ModelBundle(ArchDescriptor desc, nn::Network net);

  const ArchDescriptor& descriptor() const { return desc_; }
  const std::vector<std::string>& class_names() const { return desc_.class_names; }
  int class_count() const { return static_cast<int>(desc_.class_names.size()); }
  const std::string& latent_layer_id() const { return desc_.latent_layer_id; }
  std::size_t latent_index() const { return latent_index_; }
  /// Index of the layer whose output is the class score used for saliency.
  std::size_t score_index() const { return score_index_; }
  /// "logit" when a pre-activation score is exposed, otherwise "posterior".
  const std::string& score_kind() const { return score_kind_; }

  Dims input_dims() const { return net_->input_dims(); }
  Dims latent_dims() const { return net_->dims_after(latent_index_); }

  const nn::Network& network() const { return *net_; }
  std::shared_ptr<const nn::Network> shared_network() const { return net_; }

  /// Digest recorded when the bundle was created.
  const std::string& weight_digest() const { return digest_; }
  /// Digest recomputed from the live weights.
  std::string current_digest() const { return net_->digest(); }

  /// Exclusivity contract for gradient-recording operations.
  std::unique_lock<std::mutex> exclusive() const { return std::unique_lock(*mutex_); }

 private:
  ArchDescriptor desc_;
  std::shared_ptr<const nn::Network> net_;
  std::size_t latent_index_ = 0;
  std::size_t score_index_ = 0;
  std::string score_kind_;
  std::string digest_;
  std::shared_ptr<std::mutex> mutex_;
};

/// Loads weights for `desc` from `weights_path`.
ModelBundle load_classifier(const std::string& weights_path, const ArchDescriptor& desc);
/// Convenience: reads the descriptor from disk too.
ModelBundle load_classifier(const std::string& weights_path, const std::string& descriptor_path);
/// Seeded random initialisation; used to bootstrap fixtures.
ModelBundle make_classifier(const ArchDescriptor& desc, unsigned long long seed);

/// The classifier truncated at its latent layer. Shares the bundle's weights.
class Encoder {
 public:
  explicit Encoder(const ModelBundle& bundle);

  Dims input_dims() const { return net_->input_dims(); }
  Dims latent_dims() const { return net_->dims_after(end_ - 1); }
  const std::string& digest() const { return digest_; }
  std::string current_digest() const { return net_->digest(0, end_); }

  /// Batched forward in evaluation mode; records into `tape` when given.
  Tensor forward(const Tensor& images, nn::Tape* tape = nullptr) const;
  /// dL/dimages for a taped forward. Never forms parameter gradients.
  Tensor backward_to_input(const nn::Tape& tape, const Tensor& grad_latent) const;

 private:
  std::shared_ptr<const nn::Network> net_;
  std::size_t end_;
  std::string digest_;
};

Encoder truncate_encoder(const ModelBundle& bundle);

LatentTensor encode(const Encoder& enc, const Image& x);
ClassScores predict(const ModelBundle& bundle, const Image& x);
std::vector<ClassScores> predict(const ModelBundle& bundle, std::span<const Image> xs);
/// Runs the layers after the latent layer.
ClassScores predict_from_latent(const ModelBundle& bundle, const LatentTensor& z);

/// {i : posteriors[i] >= threshold}.
std::set<int> prediction_set(const ClassScores& scores, double threshold = 0.5);
/// Argmax of the posteriors; ties go to the lowest index.
int top_class(const ClassScores& scores);

/// Throws ShapeError / ArgumentError unless `x` is a valid model input.
void validate_input(const ModelBundle& bundle, const Image& x);

}  // namespace pv
