#pragma once

#include <filesystem>
#include <functional>
#include <istream>
#include <map>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include <nlohmann/json.hpp>

#include "pv/data_ingest.hpp"
#include "pv/decoder.hpp"
#include "pv/losses.hpp"
#include "pv/model_core.hpp"
#include "pv/pv_compose.hpp"

namespace pv {

inline constexpr std::string_view kCantTell = "I just can't tell";

enum class Explainer { gradcam, pv };
std::string to_string(Explainer e);
Explainer parse_explainer(const std::string& s);

struct QuizQuestion {
  std::string question_id;
  std::string sample_id;
  std::string panel_digest;  // set per explainer variant
  std::vector<std::string> options;  // exactly five, includes kCantTell
  std::string model_prediction;
  std::vector<std::string> truth_labels;
  Outcome outcome = Outcome::correct;

  nlohmann::json to_json() const;
  static QuizQuestion from_json(const nlohmann::json& j);
};

/// Samples n_correct questions from the correct pool and n_incorrect from the
/// incorrect pool. Options: the top predicted class, up to three other target
/// labels (excess dropped at random, shortfall padded with random classes),
/// and kCantTell, in a seeded random order.
std::vector<QuizQuestion> build_quiz(const OutcomePartition& partition, const std::vector<std::string>& class_names,
                                     int n_correct = 16, int n_incorrect = 14, unsigned long long seed = 0);

/// Copy of `quiz` with panel digests for one explainer. Options are untouched,
/// so every variant asks exactly the same questions.
std::vector<QuizQuestion> quiz_variant(const std::vector<QuizQuestion>& quiz,
                                       const std::function<std::string(const QuizQuestion&)>& panel_digest);

/// Per-user presentation order of a question's options.
std::vector<std::string> presented_options(const QuizQuestion& q, const std::string& user_id,
                                           unsigned long long seed);

/// A quiz plus one panel list per explainer variant.
struct QuizExport {
  unsigned long long seed = 0;
  std::vector<QuizQuestion> questions;  // panel_digest left empty
  std::map<std::string, std::vector<QuizQuestion>> variants;

  nlohmann::json to_json() const;
  static QuizExport from_json(const nlohmann::json& j);
  static QuizExport load(const std::filesystem::path& path);
};

struct QuizBundle {
  QuizExport quiz;
  std::vector<EncodedAsset> assets;  // panel PNGs, named "<variant>/<question_id>"
};

/// Builds the quiz and renders, per question, the top-class Grad-CAM overlay
/// and PV panels.
QuizBundle build_quiz_export(const ModelBundle& bundle, const Encoder& enc, const Decoder& dec,
                             const DatasetManifest& manifest, const OutcomePartition& partition,
                             int n_correct = 16, int n_incorrect = 14, unsigned long long seed = 0,
                             int panel_scale = 4);

struct Response {
  std::string user_id;
  std::string question_id;
  std::string chosen_option;
};

/// CSV with header user_id,question_id,chosen_option. Fields may be quoted.
std::vector<Response> read_responses_csv(std::istream& in);
std::vector<Response> read_responses_csv(const std::filesystem::path& path);

struct SubsetScore {
  int hits = 0;
  int total = 0;
  double accuracy = 0.0;        // hits / total
  double standard_error = 0.0;  // of the mean per-user accuracy
};

struct UserScore {
  std::string user_id;
  int correct_hits = 0, correct_total = 0;
  int incorrect_hits = 0, incorrect_total = 0;

  double accuracy(Outcome subset) const;
};

struct ScoreSummary {
  SubsetScore on_correct;
  SubsetScore on_incorrect;
  std::vector<UserScore> per_user;  // sorted by user_id

  nlohmann::json to_json() const;
};

/// A response is a hit iff it names the model's prediction. Throws
/// ValidationError on unknown questions or options.
ScoreSummary score_responses(const std::vector<QuizQuestion>& quiz, const std::vector<Response>& responses);

enum class Tail { less, greater, two_sided };
Tail parse_tail(const std::string& s);

struct MannWhitneyResult {
  double u = 0.0;  // U of the first sample: pairs (a_i > b_j) plus half the ties
  double z = 0.0;  // normal approximation, tie-corrected variance, no continuity correction
  double p = 1.0;
};

/// `less` tests H1: a tends to be smaller than b.
MannWhitneyResult mann_whitney_u(std::span<const double> a, std::span<const double> b, Tail tail);

struct InvarianceReport {
  std::vector<std::string> sample_ids;
  std::vector<double> ssim_ab, mse_ab;
  std::vector<double> ssim_a_untrained, mse_a_untrained;
  std::vector<double> ssim_b_untrained, mse_b_untrained;
  double mean_ssim_ab = 0, mean_mse_ab = 0;
  double mean_ssim_a_untrained = 0, mean_mse_a_untrained = 0;
  double mean_ssim_b_untrained = 0, mean_mse_b_untrained = 0;

  nlohmann::json to_json() const;
};

/// Per-sample agreement between two decoders' reconstructions of the same
/// latents, with an untrained decoder as the reference baseline.
InvarianceReport decoder_invariance(const Decoder& a, const Decoder& b, const Decoder& untrained, const Encoder& enc,
                                    const ImageSet& eval_set, const SsimOptions& ssim = {});

}  // namespace pv
