#pragma once

#include <optional>
#include <set>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "pv/data_ingest.hpp"
#include "pv/decoder.hpp"
#include "pv/model_core.hpp"
#include "pv/saliency.hpp"

namespace pv {

struct PVExplanation {
  Image values;  // RGB in [0,1]
  int class_index = 0;
  std::string saliency_ref;
  std::string reconstruction_ref;
  std::string sample_id;

  std::string digest() const;
};

/// p(i,j,k) = (1 - m(i,j)) + m(i,j) * y(i,j,k). Masked-out pixels go white.
Image compose_pv(const Image& mask, const Image& reconstruction);
PVExplanation compose_pv(const SaliencyMap& m, const Reconstruction& y);

struct ExplanationRecord {
  std::string sample_id;
  Image input;
  ClassScores scores;
  int top_class = 0;
  int class_index = 0;
  std::optional<std::set<int>> targets;
  std::optional<Outcome> outcome;
  SaliencyMap saliency;
  Reconstruction reconstruction;
  PVExplanation pv;

  nlohmann::json to_json(const std::vector<std::string>& class_names) const;
};

struct ExplainRequest {
  std::string sample_id;
  std::optional<int> class_index;  // defaults to the top predicted class
  std::optional<std::set<int>> targets;
  double threshold = 0.5;
};

/// Runs encode -> saliency -> decode -> compose. Errors carry the failing stage.
ExplanationRecord explain(const ModelBundle& bundle, const Encoder& enc, const Decoder& dec, const Image& x,
                          const ExplainRequest& request = {}, const SaliencyBackend* backend = nullptr);

enum class PanelLayout {
  triptych,   // input | Grad-CAM overlay | PV
  quad,       // input | Grad-CAM overlay | reconstruction | PV
  pv,         // PV only, no caption
  saliency,   // the map as grayscale, no caption
  reconstruction,  // y only, no caption
  input,      // x only, no caption
  overlay,    // Grad-CAM overlay only, no caption
};

PanelLayout parse_panel_layout(const std::string& s);

struct PanelOptions {
  int scale = 1;  // nearest-neighbour upscaling of each pane
  std::vector<std::string> class_names;
};

/// Height of the caption strip below multi-pane layouts, before scaling.
constexpr int kCaptionHeight = 16;
/// Peak opacity of the Grad-CAM colour overlay.
constexpr double kOverlayOpacity = 0.4;

/// Input blended with the JET colouring of `m`, opacity 0.4 * m(i,j); a zero
/// map leaves the input unchanged.
Image gradcam_overlay(const Image& input, const Image& mask);

Image render_panel(const ExplanationRecord& record, PanelLayout layout, const PanelOptions& opts = {});

/// Loads, preprocesses and explains one manifest sample, attaching its targets.
/// Throws ValidationError for an unknown sample id.
ExplanationRecord explain_sample(const ModelBundle& bundle, const Encoder& enc, const Decoder& dec,
                                 const DatasetManifest& manifest, const std::string& sample_id,
                                 std::optional<int> class_index = std::nullopt, double threshold = 0.5);

struct EncodedAsset {
  std::string name;  // input, saliency, overlay, reconstruction, pv, panel
  std::string png;
  std::string digest;  // of the PNG bytes
};

/// The PNGs served and exported for one explanation; the panel is the quad layout.
std::vector<EncodedAsset> encode_assets(const ExplanationRecord& record, const PanelOptions& opts = {});

}  // namespace pv
