#pragma once

#include <string>
#include <utility>
#include <vector>

#include <nlohmann/json.hpp>

#include "pv/model_core.hpp"
#include "pv/nn/network.hpp"
#include "pv/tensor.hpp"

namespace pv {

struct DecoderStage {
  int channels = 0;
  int conv_layers = 2;
  bool skip = false;  // declared skip connections are rejected
};

/// Shape and layout of an inversion decoder. Each stage is
/// transposed-conv (linear, x2) -> batch norm -> conv_layers x conv(leaky),
/// followed by a sigmoid output conv and, if doubling overshoots, a centre crop.
struct DecoderConfig {
  Dims latent;  // (d, h~, w~)
  int output_height = 0;
  int output_width = 0;
  std::vector<DecoderStage> stages;
  double leaky_slope = 0.2;
  int kernel = 3;

  /// Smallest number of x2 stages that reaches the output size.
  static int required_stages(const Dims& latent, int out_height, int out_width);
  /// Stage channels start at `first_channels` and halve each stage (floor `min_channels`).
  static DecoderConfig halving(const Dims& latent, int out_height, int out_width, int first_channels,
                               int conv_layers = 2, int min_channels = 8);
  /// 7x7x2048 -> 224x224: channels 512, 256, 128, 64, 32.
  static DecoderConfig full_scale();
  /// 4x4x64 -> 32x32: channels 32, 16, 8.
  static DecoderConfig desk();

  void validate() const;
  /// Spatial size after each stage, starting from the latent.
  std::vector<std::pair<int, int>> planned_resolutions() const;

  nlohmann::json to_json() const;
  static DecoderConfig from_json(const nlohmann::json& j);
};

/// The decoded image y = D(z) with provenance.
struct Reconstruction {
  Image values;  // strictly inside (0,1)
  std::string source_latent_digest;
  std::string decoder_digest;

  std::string digest() const;
};

/// Anything that maps a latent batch to an image batch; the trained decoder
/// and test doubles both qualify.
class ReconstructionModel {
 public:
  virtual ~ReconstructionModel() = default;
  virtual Tensor reconstruct(const Tensor& latents) const = 0;
  virtual std::string digest() const = 0;
};

class Decoder final : public ReconstructionModel {
 public:
  Decoder(DecoderConfig cfg, nn::Network net) : cfg_(std::move(cfg)), net_(std::move(net)) {}

  const DecoderConfig& config() const { return cfg_; }
  const nn::Network& network() const { return net_; }
  /// Mutable access for training; callers must own the decoder exclusively.
  nn::Network& network() { return net_; }

  Tensor reconstruct(const Tensor& latents) const override;
  std::string digest() const override { return net_.digest(); }

 private:
  DecoderConfig cfg_;
  nn::Network net_;
};

Decoder build_decoder(const DecoderConfig& cfg, unsigned long long seed);
Reconstruction decode(const Decoder& dec, const LatentTensor& z);

/// Single-file checkpoint: "PVCKPT1\n", 8-byte JSON length, JSON metadata
/// (decoder config + provenance), then the weight blob.
void save_decoder(const std::string& path, const Decoder& dec, const nlohmann::json& provenance);
std::pair<Decoder, nlohmann::json> load_decoder(const std::string& path);

}  // namespace pv
