#include "pv/data_ingest.hpp"

#include <opencv2/imgproc.hpp>

#include <algorithm>
#include <fstream>
#include <map>
#include <set>

#include <nlohmann/json.hpp>

#include "pv/digest.hpp"
#include "pv/errors.hpp"
#include "pv/image_io.hpp"

namespace pv {

using nlohmann::json;
namespace fs = std::filesystem;

const Sample* DatasetManifest::find(const std::string& id) const {
  auto it = std::ranges::lower_bound(samples, id, {}, &Sample::sample_id);
  return it != samples.end() && it->sample_id == id ? &*it : nullptr;
}

std::vector<Sample> DatasetManifest::split(const std::string& tag) const {
  std::vector<Sample> out;
  std::ranges::copy_if(samples, std::back_inserter(out), [&](const Sample& s) { return s.split == tag; });
  return out;
}

std::string DatasetManifest::digest() const {
  Sha256 h;
  for (const auto& c : class_names) h.update(c).update("\n");
  for (const auto& s : samples) {
    h.update(s.sample_id).update("|").update(s.file).update("|").update(s.split).update("|");
    for (int t : s.targets) h.update(std::to_string(t)).update(",");
    h.update("\n");
  }
  return h.hex();
}

DatasetManifest load_manifest(const fs::path& root) {
  DatasetManifest m;
  m.root = root;
  if (!fs::is_directory(root / "images")) throw IngestionError("dataset root '" + root.string() + "' has no images/ directory");
  std::ifstream classes(root / "classes.txt");
  if (!classes) throw IngestionError("dataset root '" + root.string() + "' has no classes.txt");
  for (std::string line; std::getline(classes, line);) {
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (!line.empty()) m.class_names.push_back(line);
  }
  std::map<std::string, int> class_index;
  for (std::size_t i = 0; i < m.class_names.size(); ++i) class_index[m.class_names[i]] = static_cast<int>(i);

  std::ifstream ann(root / "annotations.jsonl");
  if (!ann) throw IngestionError("dataset root '" + root.string() + "' has no annotations.jsonl");
  std::vector<std::string> missing, duplicate, malformed, unknown_label;
  std::map<std::string, int> seen;
  int lineno = 0;
  for (std::string line; std::getline(ann, line);) {
    ++lineno;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    Sample s;
    try {
      const json j = json::parse(line);
      s.sample_id = j.at("id").get<std::string>();
      s.file = j.at("file").get<std::string>();
      s.split = j.value("split", "train");
      for (const auto& name : j.at("labels")) {
        auto it = class_index.find(name.get<std::string>());
        if (it == class_index.end())
          unknown_label.push_back(s.sample_id + ":" + name.get<std::string>());
        else
          s.targets.insert(it->second);
      }
    } catch (const json::exception&) {
      malformed.push_back("line " + std::to_string(lineno));
      continue;
    }
    if (seen[s.sample_id]++ == 1) duplicate.push_back(s.sample_id);
    if (!fs::exists(m.image_path(s))) missing.push_back(s.sample_id);
    m.samples.push_back(std::move(s));
  }
  std::set<std::string> referenced;
  for (const auto& s : m.samples) referenced.insert(fs::path(s.file).lexically_normal().string());
  std::vector<std::string> unannotated;
  for (const auto& entry : fs::recursive_directory_iterator(root / "images")) {
    if (!entry.is_regular_file()) continue;
    const std::string rel = fs::relative(entry.path(), root / "images").lexically_normal().string();
    if (!referenced.contains(rel)) unannotated.push_back(rel);
  }
  std::ranges::sort(unannotated);
  auto join = [](const std::vector<std::string>& v) {
    std::string out;
    for (const auto& s : v) out += (out.empty() ? "" : ", ") + s;
    return out;
  };
  std::string problems;
  if (!malformed.empty()) problems += " malformed annotations: " + join(malformed) + ";";
  if (!duplicate.empty()) problems += " duplicate ids: " + join(duplicate) + ";";
  if (!missing.empty()) problems += " missing image files for: " + join(missing) + ";";
  if (!unannotated.empty()) problems += " images without annotations: " + join(unannotated) + ";";
  if (!unknown_label.empty()) problems += " unknown labels: " + join(unknown_label) + ";";
  if (!problems.empty()) throw IngestionError("invalid dataset '" + root.string() + "':" + problems);
  std::ranges::sort(m.samples, {}, &Sample::sample_id);
  return m;
}

void write_manifest(const DatasetManifest& manifest) {
  fs::create_directories(manifest.root / "images");
  std::ofstream classes(manifest.root / "classes.txt");
  for (const auto& c : manifest.class_names) classes << c << "\n";
  std::ofstream ann(manifest.root / "annotations.jsonl");
  for (const auto& s : manifest.samples) {
    json labels = json::array();
    for (int t : s.targets) labels.push_back(manifest.class_names.at(static_cast<std::size_t>(t)));
    ann << json{{"id", s.sample_id}, {"file", s.file}, {"labels", labels}, {"split", s.split}}.dump() << "\n";
  }
}

Image preprocess(const Image& decoded, int width, int height) {
  if (decoded.channels != 3) throw IngestionError("preprocess expects an RGB image");
  const int side = std::min(decoded.height, decoded.width);
  const int oy = (decoded.height - side) / 2, ox = (decoded.width - side) / 2;
  Image square(side, side, 3);
  for (int y = 0; y < side; ++y)
    for (int x = 0; x < side; ++x)
      for (int k = 0; k < 3; ++k) square.at(y, x, k) = decoded.at(y + oy, x + ox, k);
  if (side == width && side == height) return square;
  cv::Mat src(side, side, CV_64FC3, square.data.data());
  cv::Mat dst;
  const bool shrinking = width < side || height < side;
  cv::resize(src, dst, cv::Size(width, height), 0, 0, shrinking ? cv::INTER_AREA : cv::INTER_LINEAR);
  Image out(height, width, 3);
  for (int y = 0; y < height; ++y) {
    const auto* row = dst.ptr<cv::Vec3d>(y);
    for (int x = 0; x < width; ++x)
      for (int k = 0; k < 3; ++k) out.at(y, x, k) = std::clamp(row[x][k], 0.0, 1.0);
  }
  return out;
}

Image preprocess(const fs::path& file, int width, int height) {
  return preprocess(read_image(file), width, height);
}

std::string to_string(Outcome o) {
  switch (o) {
    case Outcome::correct: return "correct";
    case Outcome::incorrect: return "incorrect";
    case Outcome::mixed: return "mixed";
  }
  return "mixed";
}

Outcome parse_outcome(const std::string& s) {
  if (s == "correct") return Outcome::correct;
  if (s == "incorrect") return Outcome::incorrect;
  if (s == "mixed") return Outcome::mixed;
  throw ArgumentError("unknown outcome '" + s + "'");
}

Outcome classify_outcome(const std::set<int>& targets, const std::set<int>& prediction) {
  if (targets == prediction) return Outcome::correct;
  const bool overlap = std::ranges::any_of(prediction, [&](int p) { return targets.contains(p); });
  return overlap ? Outcome::mixed : Outcome::incorrect;
}

const EvaluatedSample* OutcomePartition::find(const std::string& id) const {
  for (const auto& e : evaluated)
    if (e.sample_id == id) return &e;
  return nullptr;
}

const std::vector<std::string>& OutcomePartition::ids(Outcome o) const {
  switch (o) {
    case Outcome::correct: return correct;
    case Outcome::incorrect: return incorrect;
    case Outcome::mixed: return mixed;
  }
  return mixed;
}

OutcomePartition partition_by_outcome(const ModelBundle& bundle, const DatasetManifest& manifest,
                                      double threshold, const std::optional<std::string>& split) {
  if (!(threshold > 0.0 && threshold < 1.0)) throw ArgumentError("threshold must lie in (0,1)");
  OutcomePartition part;
  part.threshold = threshold;
  const Dims in = bundle.input_dims();
  constexpr std::size_t chunk = 64;
  std::vector<const Sample*> todo;
  for (const auto& s : manifest.samples)
    if (!split || s.split == *split) todo.push_back(&s);
  for (std::size_t b = 0; b < todo.size(); b += chunk) {
    std::vector<Image> images;
    const std::size_t end = std::min(todo.size(), b + chunk);
    for (std::size_t i = b; i < end; ++i) images.push_back(preprocess(manifest.image_path(*todo[i]), in.width, in.height));
    const auto scores = predict(bundle, images);
    for (std::size_t i = b; i < end; ++i) {
      EvaluatedSample e;
      e.sample_id = todo[i]->sample_id;
      e.targets = todo[i]->targets;
      e.scores = scores[i - b];
      e.prediction = prediction_set(e.scores, threshold);
      e.top_class = top_class(e.scores);
      e.outcome = classify_outcome(e.targets, e.prediction);
      switch (e.outcome) {
        case Outcome::correct: part.correct.push_back(e.sample_id); break;
        case Outcome::incorrect: part.incorrect.push_back(e.sample_id); break;
        case Outcome::mixed: part.mixed.push_back(e.sample_id); break;
      }
      part.evaluated.push_back(std::move(e));
    }
  }
  return part;
}

ImageSet load_image_set(const DatasetManifest& manifest, const std::vector<Sample>& samples, int width,
                        int height, std::string dataset_id) {
  if (samples.empty()) throw ArgumentError("load_image_set: no samples selected");
  ImageSet set;
  set.dataset_id = std::move(dataset_id);
  set.images = Tensor(3, static_cast<int>(samples.size()), height, width);
  for (std::size_t n = 0; n < samples.size(); ++n) {
    const Image im = preprocess(manifest.image_path(samples[n]), width, height);
    for (int y = 0; y < height; ++y)
      for (int x = 0; x < width; ++x)
        for (int k = 0; k < 3; ++k) set.images.at(k, static_cast<int>(n), y, x) = im.at(y, x, k);
    set.ids.push_back(samples[n].sample_id);
  }
  return set;
}

}  // namespace pv
