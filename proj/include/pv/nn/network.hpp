#pragma once

#include <cstddef>
#include <limits>
#include <memory>
#include <optional>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "pv/nn/layers.hpp"

namespace pv::nn {

/// Recorded forward pass over layers [begin, begin + caches.size()).
struct Tape {
  std::size_t begin = 0;
  std::vector<LayerCache> caches;
};

/// One gradient buffer per layer, sized like that layer's parameters.
using Gradients = std::vector<Buffer>;

/// A strictly sequential stack of layers: layer i feeds layer i + 1 only.
class Network {
 public:
  static constexpr std::size_t npos = std::numeric_limits<std::size_t>::max();

  Network() = default;
  explicit Network(Dims input) : input_(input) {}
  Network(Network&&) noexcept = default;
  Network& operator=(Network&&) noexcept = default;

  /// Appends a layer; throws ConfigError on duplicate ids or shape mismatch.
  Layer& add(std::unique_ptr<Layer> layer);

  std::size_t size() const { return layers_.size(); }
  const Layer& layer(std::size_t i) const { return *layers_.at(i); }
  Layer& layer(std::size_t i) { return *layers_.at(i); }
  std::optional<std::size_t> find(std::string_view id) const;

  Dims input_dims() const { return input_; }
  /// Per-sample dims produced by layer i.
  Dims dims_after(std::size_t i) const { return dims_.at(i); }
  Dims output_dims() const { return dims_.empty() ? input_ : dims_.back(); }

  /// Runs layers [begin, end). Records caches into `tape` when non-null.
  Tensor forward(const Tensor& x, Mode mode, Tape* tape = nullptr, std::size_t begin = 0,
                 std::size_t end = npos) const;

  /// Backpropagates through the taped range. `grads` may be null, in which
  /// case no parameter gradient is formed (frozen network).
  Tensor backward(const Tape& tape, const Tensor& grad_out, Gradients* grads,
                  bool need_input_grad = true) const;

  Gradients zero_gradients() const;
  void commit(const Tape& tape);
  void initialize(unsigned long long seed);

  std::size_t parameter_count() const;
  /// Content digest over ids, kinds, parameters and buffers of layers [begin, end).
  std::string digest(std::size_t begin = 0, std::size_t end = npos) const;

  /// Data-flow edges (from, to). Sequential networks only ever have (i, i+1).
  std::vector<std::pair<std::size_t, std::size_t>> edges() const;

 private:
  Dims input_{};
  std::vector<std::unique_ptr<Layer>> layers_;
  std::vector<Dims> dims_;
};

/// Flat binary weight blob keyed by layer id ("PVNN" magic, version 1).
std::string serialize_weights(const Network& net);
/// Loads a blob produced by serialize_weights into `net`; throws LoadError
/// naming the offending layer when ids or sizes disagree.
void deserialize_weights(std::string_view blob, Network& net);

void save_weights(const std::string& path, const Network& net);
void load_weights(const std::string& path, Network& net);

}  // namespace pv::nn
