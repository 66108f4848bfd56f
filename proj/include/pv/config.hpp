#pragma once

#include <filesystem>
#include <optional>
#include <string>

#include <nlohmann/json.hpp>

#include "pv/data_ingest.hpp"
#include "pv/decoder.hpp"
#include "pv/model_core.hpp"
#include "pv/trainer.hpp"

namespace pv {

/// The one config file shared by every subcommand and the server.
///
///   {"model": {"descriptor": "...", "weights": "..."},
///    "decoder": {"checkpoint": "...", "config": {...}?},
///    "dataset": {"root": "...", "split": "eval"?, "train_split": "train"},
///    "threshold": 0.5,
///    "train": {TrainConfig keys},
///    "quiz": {"n_correct": 16, "n_incorrect": 14, "seed": 0},
///    "server": {"host": "127.0.0.1", "port": 8080, "asset_dir": "assets"}}
///
/// Relative paths resolve against the directory holding the file.
struct AppConfig {
  std::filesystem::path model_descriptor;
  std::filesystem::path model_weights;
  std::filesystem::path decoder_checkpoint;
  std::optional<DecoderConfig> decoder_config;
  std::filesystem::path dataset_root;
  std::optional<std::string> eval_split;
  std::string train_split = "train";
  double threshold = 0.5;
  TrainConfig train;
  int quiz_correct = 16;
  int quiz_incorrect = 14;
  unsigned long long quiz_seed = 0;
  std::string host = "127.0.0.1";
  int port = 8080;
  std::filesystem::path asset_dir = "assets";

  static AppConfig from_json(const nlohmann::json& j, const std::filesystem::path& base_dir);
  static AppConfig load(const std::filesystem::path& path);
  nlohmann::json to_json() const;
  void save(const std::filesystem::path& path) const;

  /// PV_MODEL_DESCRIPTOR, PV_MODEL_WEIGHTS, PV_DECODER, PV_DATASET,
  /// PV_ASSET_DIR, PV_PORT.
  void apply_env();
};

/// Loaders for the artefacts a config names. A missing entry is a ConfigError.
ModelBundle load_model(const AppConfig& cfg);
Decoder load_configured_decoder(const AppConfig& cfg);
DatasetManifest load_dataset(const AppConfig& cfg);

}  // namespace pv
