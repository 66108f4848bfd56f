#pragma once

#include <filesystem>
#include <functional>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "pv/data_ingest.hpp"
#include "pv/decoder.hpp"
#include "pv/losses.hpp"
#include "pv/model_core.hpp"

namespace pv {

struct TrainConfig {
  LossWeights loss_weights;
  int batch_size = 16;
  int epochs = 30;
  double learning_rate = 1e-4;
  unsigned long long seed = 0;
  NormalizationMode normalization_mode = NormalizationMode::mean;
  std::string dataset_id;
  SsimOptions ssim;

  void validate() const;
  nlohmann::json to_json() const;
  /// Missing keys keep their defaults.
  static TrainConfig from_json(const nlohmann::json& j);
  /// The `pv train` invocation that reproduces this configuration.
  std::string command_line() const;
};

/// A trained decoder with everything needed to reproduce it.
struct Checkpoint {
  Decoder decoder;
  TrainConfig config;
  std::vector<LossReport> history;       // training loss, one per epoch
  std::vector<LossReport> eval_history;  // held-out loss, when an eval set was given
  std::string encoder_digest;
  int best_epoch = -1;
  nlohmann::json timing = nlohmann::json::object();

  nlohmann::json provenance() const;
  void save(const std::filesystem::path& path) const;
  static Checkpoint load(const std::filesystem::path& path);
};

struct TrainOptions {
  /// Held-out set; when present the returned decoder is the best epoch by eval composite loss.
  const ImageSet* eval_set = nullptr;
  /// When non-empty: last.ckpt every epoch, best.ckpt on improvement, diverged.ckpt on failure.
  std::filesystem::path checkpoint_dir;
  std::function<void(const nlohmann::json&)> on_step;
  std::function<void(int, const LossReport&)> on_epoch;
};

/// Minimises the composite loss of D(E(x)) against x over `data`, with E frozen.
/// Throws NumericError on a non-finite loss after writing a diagnostic checkpoint.
Checkpoint train_decoder(const TrainConfig& cfg, const Encoder& enc, Decoder dec, const ImageSet& data,
                         const TrainOptions& opts = {});

/// LossReport of `model` over the whole of `eval_set`, normalised as one batch.
/// paper_sum is reported per sample.
LossReport evaluate_reconstruction(const Encoder& enc, const ReconstructionModel& model,
                                   const ImageSet& eval_set, const LossWeights& weights = {},
                                   const SsimOptions& ssim = {},
                                   NormalizationMode mode = NormalizationMode::mean);

/// Pixelwise mean of a batch, replicated `n` times.
Tensor mean_image_batch(const Tensor& images, int n);

}  // namespace pv
