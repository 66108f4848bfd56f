#pragma once

#include <filesystem>
#include <optional>
#include <set>
#include <string>
#include <vector>

#include "pv/model_core.hpp"
#include "pv/tensor.hpp"

namespace pv {

struct Sample {
  std::string sample_id;
  std::string file;  // relative to <root>/images
  std::set<int> targets;
  std::string split = "train";
};

/// Dataset layout: root/images/*, root/annotations.jsonl with lines
/// {"id", "file", "labels": [names], "split"?}, root/classes.txt.
struct DatasetManifest {
  std::filesystem::path root;
  std::vector<Sample> samples;  // sorted by sample_id
  std::vector<std::string> class_names;

  std::filesystem::path image_path(const Sample& s) const { return root / "images" / s.file; }
  const Sample* find(const std::string& id) const;
  std::vector<Sample> split(const std::string& tag) const;
  std::string digest() const;
};

DatasetManifest load_manifest(const std::filesystem::path& root);
/// Writes classes.txt and annotations.jsonl for `manifest` (images must already exist).
void write_manifest(const DatasetManifest& manifest);

/// Centre-crop to a square, resize to width x height, values in [0,1].
Image preprocess(const Image& decoded, int width, int height);
Image preprocess(const std::filesystem::path& file, int width, int height);

enum class Outcome { correct, incorrect, mixed };
std::string to_string(Outcome o);
Outcome parse_outcome(const std::string& s);

/// correct: prediction set equals targets; incorrect: no overlap; else mixed.
Outcome classify_outcome(const std::set<int>& targets, const std::set<int>& prediction);

struct EvaluatedSample {
  std::string sample_id;
  std::set<int> targets;
  ClassScores scores;
  std::set<int> prediction;
  int top_class = 0;
  Outcome outcome = Outcome::mixed;
};

struct OutcomePartition {
  std::vector<std::string> correct;
  std::vector<std::string> incorrect;
  std::vector<std::string> mixed;
  double threshold = 0.5;
  std::vector<EvaluatedSample> evaluated;  // same order as the manifest

  const EvaluatedSample* find(const std::string& id) const;
  const std::vector<std::string>& ids(Outcome o) const;
};

/// Evaluates every sample (optionally one split) and partitions by outcome.
OutcomePartition partition_by_outcome(const ModelBundle& bundle, const DatasetManifest& manifest,
                                      double threshold = 0.5,
                                      const std::optional<std::string>& split = std::nullopt);

/// Preprocessed images of a manifest subset packed into one (3, n, h, w) batch.
struct ImageSet {
  std::string dataset_id;
  std::vector<std::string> ids;
  Tensor images;

  int size() const { return images.batch; }
};

ImageSet load_image_set(const DatasetManifest& manifest, const std::vector<Sample>& samples,
                        int width, int height, std::string dataset_id);

}  // namespace pv
