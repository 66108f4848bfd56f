#include "pv/pv_compose.hpp"

#include <opencv2/imgproc.hpp>

#include <algorithm>
#include <cmath>

#include "pv/digest.hpp"
#include "pv/errors.hpp"
#include "pv/image_io.hpp"

namespace pv {

using nlohmann::json;

std::string PVExplanation::digest() const { return sha256_hex(values.data); }

Image compose_pv(const Image& mask, const Image& reconstruction) {
  if (mask.channels != 1 || mask.height != reconstruction.height || mask.width != reconstruction.width)
    throw ShapeError("compose_pv: saliency map and reconstruction are not aligned");
  Image p(reconstruction.height, reconstruction.width, reconstruction.channels);
  for (int i = 0; i < p.height; ++i)
    for (int j = 0; j < p.width; ++j) {
      const double m = mask.at(i, j);
      for (int k = 0; k < p.channels; ++k) p.at(i, j, k) = (1.0 - m) + m * reconstruction.at(i, j, k);
    }
  return p;
}

PVExplanation compose_pv(const SaliencyMap& m, const Reconstruction& y) {
  return {compose_pv(m.values, y.values), m.class_index, m.digest(), y.digest(), {}};
}

json ExplanationRecord::to_json(const std::vector<std::string>& class_names) const {
  auto name = [&](int c) {
    return c >= 0 && c < static_cast<int>(class_names.size()) ? class_names[static_cast<std::size_t>(c)]
                                                              : std::to_string(c);
  };
  json j{{"sample_id", sample_id},
         {"class_index", class_index},
         {"class_name", name(class_index)},
         {"top_class", top_class},
         {"top_class_name", name(top_class)},
         {"posteriors", scores.posteriors},
         {"saliency", {{"digest", saliency.digest()}, {"backend", saliency.backend}, {"target", saliency.target}}},
         {"reconstruction",
          {{"digest", reconstruction.digest()},
           {"source_latent_digest", reconstruction.source_latent_digest},
           {"decoder_digest", reconstruction.decoder_digest}}},
         {"pv", {{"digest", pv.digest()}, {"saliency_ref", pv.saliency_ref}, {"reconstruction_ref", pv.reconstruction_ref}}},
         {"input_digest", sha256_hex(input.data)}};
  if (targets) {
    json t = json::array();
    for (int c : *targets) t.push_back(name(c));
    j["targets"] = t;
  }
  if (outcome) j["outcome"] = to_string(*outcome);
  return j;
}

namespace {
template <typename F>
auto staged(const char* stage, F&& f) {
  try {
    return f();
  } catch (Error& e) {
    if (e.stage().empty()) e.set_stage(stage);
    throw;
  }
}
}  // namespace

ExplanationRecord explain(const ModelBundle& bundle, const Encoder& enc, const Decoder& dec, const Image& x,
                          const ExplainRequest& request, const SaliencyBackend* backend) {
  const GradCamBackend default_backend;
  if (!backend) backend = &default_backend;
  ExplanationRecord r;
  r.sample_id = request.sample_id;
  r.input = x;
  r.targets = request.targets;
  r.scores = staged("predict", [&] { return predict(bundle, x); });
  r.top_class = top_class(r.scores);
  r.class_index = request.class_index.value_or(r.top_class);
  if (r.class_index < 0 || r.class_index >= bundle.class_count()) {
    ArgumentError e("class index " + std::to_string(r.class_index) + " out of range");
    e.set_stage("request");
    throw e;
  }
  if (r.targets)
    r.outcome = classify_outcome(*r.targets, prediction_set(r.scores, request.threshold));
  const LatentTensor z = staged("encode", [&] { return encode(enc, x); });
  r.saliency = staged("saliency", [&] { return backend->compute(bundle, x, r.class_index); });
  r.reconstruction = staged("decode", [&] { return decode(dec, z); });
  r.pv = staged("compose", [&] { return compose_pv(r.saliency, r.reconstruction); });
  r.pv.sample_id = r.sample_id;
  return r;
}

PanelLayout parse_panel_layout(const std::string& s) {
  if (s == "triptych") return PanelLayout::triptych;
  if (s == "quad") return PanelLayout::quad;
  if (s == "pv") return PanelLayout::pv;
  if (s == "saliency") return PanelLayout::saliency;
  if (s == "reconstruction") return PanelLayout::reconstruction;
  if (s == "input") return PanelLayout::input;
  if (s == "overlay") return PanelLayout::overlay;
  throw ArgumentError("unknown panel layout '" + s + "'");
}

Image gradcam_overlay(const Image& input, const Image& mask) {
  if (mask.channels != 1 || mask.height != input.height || mask.width != input.width)
    throw ShapeError("gradcam_overlay: map and image are not aligned");
  cv::Mat m8(mask.height, mask.width, CV_8UC1);
  for (int y = 0; y < mask.height; ++y)
    for (int x = 0; x < mask.width; ++x)
      m8.at<unsigned char>(y, x) = static_cast<unsigned char>(std::lround(255.0 * std::clamp(mask.at(y, x), 0.0, 1.0)));
  cv::Mat jet;
  cv::applyColorMap(m8, jet, cv::COLORMAP_JET);
  Image out = input;
  for (int y = 0; y < input.height; ++y)
    for (int x = 0; x < input.width; ++x) {
      const double a = kOverlayOpacity * std::clamp(mask.at(y, x), 0.0, 1.0);
      const auto bgr = jet.at<cv::Vec3b>(y, x);
      for (int k = 0; k < 3; ++k) out.at(y, x, k) = (1.0 - a) * input.at(y, x, k) + a * bgr[2 - k] / 255.0;
    }
  return out;
}

namespace {

Image gray_to_rgb(const Image& m) {
  Image out(m.height, m.width, 3);
  for (int y = 0; y < m.height; ++y)
    for (int x = 0; x < m.width; ++x)
      for (int k = 0; k < 3; ++k) out.at(y, x, k) = m.at(y, x);
  return out;
}

Image upscale(const Image& im, int s) {
  if (s == 1) return im;
  Image out(im.height * s, im.width * s, im.channels);
  for (int y = 0; y < out.height; ++y)
    for (int x = 0; x < out.width; ++x)
      for (int k = 0; k < im.channels; ++k) out.at(y, x, k) = im.at(y / s, x / s, k);
  return out;
}

Image tile(const std::vector<Image>& panes, const std::vector<std::string>& captions, int scale) {
  const int h = panes.front().height, w = panes.front().width;
  const int strip = kCaptionHeight * scale;
  Image out(h + strip, w * static_cast<int>(panes.size()), 3, 0.0);
  for (std::size_t p = 0; p < panes.size(); ++p)
    for (int y = 0; y < h; ++y)
      for (int x = 0; x < w; ++x)
        for (int k = 0; k < 3; ++k) out.at(y, static_cast<int>(p) * w + x, k) = panes[p].at(y, x, k);
  cv::Mat strip_mat(strip, out.width, CV_8UC1, cv::Scalar(0));
  for (std::size_t p = 0; p < captions.size(); ++p)
    cv::putText(strip_mat, captions[p], cv::Point(static_cast<int>(p) * w + 2, strip - 4 * scale),
                cv::FONT_HERSHEY_PLAIN, 0.7 * scale, cv::Scalar(255), 1, cv::LINE_8);
  for (int y = 0; y < strip; ++y)
    for (int x = 0; x < out.width; ++x)
      for (int k = 0; k < 3; ++k) out.at(h + y, x, k) = strip_mat.at<unsigned char>(y, x) / 255.0;
  return out;
}

}  // namespace

Image render_panel(const ExplanationRecord& record, PanelLayout layout, const PanelOptions& opts) {
  if (opts.scale < 1) throw ArgumentError("panel scale must be at least 1");
  const std::string cls = record.class_index < static_cast<int>(opts.class_names.size())
                              ? opts.class_names[static_cast<std::size_t>(record.class_index)]
                              : std::to_string(record.class_index);
  switch (layout) {
    case PanelLayout::pv: return upscale(quantize8(record.pv.values), opts.scale);
    case PanelLayout::saliency: return upscale(gray_to_rgb(record.saliency.values), opts.scale);
    case PanelLayout::reconstruction: return upscale(record.reconstruction.values, opts.scale);
    case PanelLayout::input: return upscale(record.input, opts.scale);
    case PanelLayout::overlay: return upscale(gradcam_overlay(record.input, record.saliency.values), opts.scale);
    case PanelLayout::triptych:
      return tile({upscale(record.input, opts.scale),
                   upscale(gradcam_overlay(record.input, record.saliency.values), opts.scale),
                   upscale(record.pv.values, opts.scale)},
                  {"input", "Grad-CAM " + cls, "PV " + cls}, opts.scale);
    case PanelLayout::quad:
      return tile({upscale(record.input, opts.scale),
                   upscale(gradcam_overlay(record.input, record.saliency.values), opts.scale),
                   upscale(record.reconstruction.values, opts.scale), upscale(record.pv.values, opts.scale)},
                  {"input", "Grad-CAM " + cls, "reconstruction", "PV " + cls}, opts.scale);
  }
  return record.pv.values;
}

ExplanationRecord explain_sample(const ModelBundle& bundle, const Encoder& enc, const Decoder& dec,
                                 const DatasetManifest& manifest, const std::string& sample_id,
                                 std::optional<int> class_index, double threshold) {
  const Sample* s = manifest.find(sample_id);
  if (!s) throw ValidationError("unknown sample '" + sample_id + "'");
  const Dims in = bundle.input_dims();
  const Image x = preprocess(manifest.image_path(*s), in.width, in.height);
  ExplainRequest req{sample_id, class_index, s->targets, threshold};
  return explain(bundle, enc, dec, x, req);
}

std::vector<EncodedAsset> encode_assets(const ExplanationRecord& record, const PanelOptions& opts) {
  std::vector<EncodedAsset> out;
  auto add = [&](std::string name, const Image& img) {
    std::string png = encode_png(img);
    std::string digest = sha256_hex(png);
    out.push_back({std::move(name), std::move(png), std::move(digest)});
  };
  add("input", record.input);
  add("saliency", record.saliency.values);
  add("overlay", gradcam_overlay(record.input, record.saliency.values));
  add("reconstruction", record.reconstruction.values);
  add("pv", record.pv.values);
  add("panel", render_panel(record, PanelLayout::quad, opts));
  return out;
}

}  // namespace pv
