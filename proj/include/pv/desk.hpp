#pragma once

#include <filesystem>
#include <functional>
#include <random>
#include <set>
#include <string>
#include <vector>

#include "pv/data_ingest.hpp"
#include "pv/model_core.hpp"
#include "pv/tensor.hpp"
#include "pv/trainer.hpp"

/// Small self-contained reference setup: a procedural 10-class multi-label
/// image set at 32x32 and a 6-conv classifier trained on it. Used by the
/// fixture command, the tests and the acceptance suite.
namespace pv::desk {

constexpr int kSide = 32;

const std::vector<std::string>& class_names();

/// conv1..conv6 (three stride-2), latent "conv6" at 4x4x64, global average
/// pool, dense "logits", sigmoid "posteriors".
ArchDescriptor descriptor();

struct SyntheticSample {
  Image image;
  std::set<int> targets;
};

/// One or two non-overlapping shapes of distinct classes on a noisy
/// gradient background.
SyntheticSample render_sample(std::mt19937_64& rng);

struct DatasetSpec {
  int train = 2000;
  int eval = 400;
  unsigned long long seed = 7;
};

/// Writes PNGs plus manifest files under `root`; splits are tagged
/// "train" and "eval".
DatasetManifest generate_dataset(const std::filesystem::path& root, const DatasetSpec& spec = {});

struct FitOptions {
  int epochs = 12;
  int batch_size = 32;
  double learning_rate = 2e-3;
  unsigned long long seed = 11;
  std::function<void(int epoch, double bce)> on_epoch;
};

/// Trains a classifier for `desc` with binary cross-entropy and Adam.
ModelBundle fit_classifier(const ArchDescriptor& desc, const ImageSet& data,
                           const std::vector<std::set<int>>& targets, const FitOptions& opts = {});

/// Decoder training preset for the desk setup: default loss weights, batch
/// 16, 30 epochs, Adam at 3e-3, relative normalisation.
TrainConfig train_config();

struct FixturePaths {
  std::filesystem::path root;
  std::filesystem::path dataset;
  std::filesystem::path descriptor;
  std::filesystem::path weights;
  std::filesystem::path decoder;
  std::filesystem::path config;
};

struct FixtureOptions {
  DatasetSpec dataset;
  FitOptions classifier;
  int decoder_epochs = 4;
  int decoder_samples = 600;
  bool verbose = false;
};

/// Builds dataset, classifier, a briefly trained decoder and a config file
/// under `root`. Reuses an existing fixture whose stamp matches `opts`.
FixturePaths write_fixture(const std::filesystem::path& root, const FixtureOptions& opts = {});
FixturePaths fixture_paths(const std::filesystem::path& root);

}  // namespace pv::desk
