#include "pv/config.hpp"

#include <cstdlib>
#include <fstream>

#include "pv/errors.hpp"

namespace pv {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {
fs::path resolve(const fs::path& base, const std::string& p) {
  if (p.empty()) return {};
  const fs::path path(p);
  return path.is_absolute() ? path : (base / path).lexically_normal();
}
}  // namespace

AppConfig AppConfig::from_json(const json& j, const fs::path& base) {
  AppConfig c;
  try {
    if (!j.is_object()) throw ConfigError("config must be a JSON object");
    if (j.contains("model")) {
      const auto& m = j.at("model");
      c.model_descriptor = resolve(base, m.value("descriptor", ""));
      c.model_weights = resolve(base, m.value("weights", ""));
    }
    if (j.contains("decoder")) {
      const auto& d = j.at("decoder");
      c.decoder_checkpoint = resolve(base, d.value("checkpoint", ""));
      if (d.contains("config")) c.decoder_config = DecoderConfig::from_json(d.at("config"));
    }
    if (j.contains("dataset")) {
      const auto& d = j.at("dataset");
      c.dataset_root = resolve(base, d.value("root", ""));
      if (d.contains("split") && !d.at("split").is_null()) c.eval_split = d.at("split").get<std::string>();
      c.train_split = d.value("train_split", c.train_split);
    }
    c.threshold = j.value("threshold", c.threshold);
    if (!(c.threshold > 0.0 && c.threshold < 1.0)) throw ConfigError("threshold must lie in (0, 1)");
    if (j.contains("train")) c.train = TrainConfig::from_json(j.at("train"));
    if (j.contains("quiz")) {
      const auto& q = j.at("quiz");
      c.quiz_correct = q.value("n_correct", c.quiz_correct);
      c.quiz_incorrect = q.value("n_incorrect", c.quiz_incorrect);
      c.quiz_seed = q.value("seed", c.quiz_seed);
    }
    if (j.contains("server")) {
      const auto& s = j.at("server");
      c.host = s.value("host", c.host);
      c.port = s.value("port", c.port);
      c.asset_dir = resolve(base, s.value("asset_dir", std::string("assets")));
    } else {
      c.asset_dir = resolve(base, "assets");
    }
  } catch (const json::exception& e) {
    throw ConfigError(std::string("malformed config: ") + e.what());
  }
  return c;
}

AppConfig AppConfig::load(const fs::path& path) {
  std::ifstream f(path);
  if (!f) throw ConfigError("config file '" + path.string() + "' not found");
  json j;
  try {
    j = json::parse(f);
  } catch (const json::exception& e) {
    throw ConfigError("config file '" + path.string() + "' is not valid JSON: " + e.what());
  }
  return from_json(j, fs::absolute(path).parent_path());
}

json AppConfig::to_json() const {
  json decoder = {{"checkpoint", decoder_checkpoint.string()}};
  if (decoder_config) decoder["config"] = decoder_config->to_json();
  json dataset = {{"root", dataset_root.string()}, {"train_split", train_split}};
  if (eval_split) dataset["split"] = *eval_split;
  return {{"model", {{"descriptor", model_descriptor.string()}, {"weights", model_weights.string()}}},
          {"decoder", decoder},
          {"dataset", dataset},
          {"threshold", threshold},
          {"train", train.to_json()},
          {"quiz", {{"n_correct", quiz_correct}, {"n_incorrect", quiz_incorrect}, {"seed", quiz_seed}}},
          {"server", {{"host", host}, {"port", port}, {"asset_dir", asset_dir.string()}}}};
}

void AppConfig::save(const fs::path& path) const {
  std::ofstream f(path);
  if (!f) throw ConfigError("cannot write config '" + path.string() + "'");
  f << to_json().dump(2) << "\n";
}

void AppConfig::apply_env() {
  auto env = [](const char* name) -> std::optional<std::string> {
    const char* v = std::getenv(name);
    if (!v || !*v) return std::nullopt;
    return std::string(v);
  };
  if (auto v = env("PV_MODEL_DESCRIPTOR")) model_descriptor = *v;
  if (auto v = env("PV_MODEL_WEIGHTS")) model_weights = *v;
  if (auto v = env("PV_DECODER")) decoder_checkpoint = *v;
  if (auto v = env("PV_DATASET")) dataset_root = *v;
  if (auto v = env("PV_ASSET_DIR")) asset_dir = *v;
  if (auto v = env("PV_PORT")) {
    try {
      std::size_t used = 0;
      port = std::stoi(*v, &used);
      if (used != v->size() || port < 0 || port > 65535) throw std::invalid_argument("range");
    } catch (const std::exception&) {
      throw ConfigError("PV_PORT='" + *v + "' is not a valid port");
    }
  }
}

ModelBundle load_model(const AppConfig& cfg) {
  if (cfg.model_descriptor.empty() || cfg.model_weights.empty())
    throw ConfigError("config names no model descriptor and weights");
  return load_classifier(cfg.model_weights.string(), cfg.model_descriptor.string());
}

Decoder load_configured_decoder(const AppConfig& cfg) {
  if (cfg.decoder_checkpoint.empty()) throw ConfigError("config names no decoder checkpoint");
  return load_decoder(cfg.decoder_checkpoint.string()).first;
}

DatasetManifest load_dataset(const AppConfig& cfg) {
  if (cfg.dataset_root.empty()) throw ConfigError("config names no dataset root");
  return load_manifest(cfg.dataset_root);
}

}  // namespace pv
