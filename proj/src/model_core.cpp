#include "pv/model_core.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>

#include "pv/digest.hpp"
#include "pv/errors.hpp"

namespace pv {

using nlohmann::json;

ArchDescriptor ArchDescriptor::from_json(const json& j) {
  ArchDescriptor d;
  try {
    d.name = j.value("name", "");
    const auto& shape = j.at("input_shape");
    if (!shape.is_array() || shape.size() != 2) throw ConfigError("input_shape must be [w, h]");
    d.input_width = shape[0].get<int>();
    d.input_height = shape[1].get<int>();
    d.class_names = j.at("class_names").get<std::vector<std::string>>();
    d.latent_layer_id = j.at("latent_layer_id").get<std::string>();
    d.layers = j.at("layers");
  } catch (const json::exception& e) {
    throw ConfigError(std::string("malformed architecture descriptor: ") + e.what());
  }
  if (d.class_names.size() < 2) throw ConfigError("descriptor needs at least two classes");
  if (d.input_width <= 0 || d.input_height <= 0) throw ConfigError("input_shape must be positive");
  return d;
}

ArchDescriptor ArchDescriptor::load(const std::string& path) {
  std::ifstream f(path);
  if (!f) throw LoadError("descriptor '" + path + "' not found");
  json j;
  try {
    f >> j;
  } catch (const json::exception& e) {
    throw ConfigError("descriptor '" + path + "' is not valid JSON: " + e.what());
  }
  return from_json(j);
}

json ArchDescriptor::to_json() const {
  return {{"name", name},
          {"input_shape", {input_width, input_height}},
          {"class_names", class_names},
          {"latent_layer_id", latent_layer_id},
          {"layers", layers}};
}

void ArchDescriptor::save(const std::string& path) const {
  std::ofstream f(path);
  if (!f) throw LoadError("cannot write descriptor '" + path + "'");
  f << to_json().dump(2) << "\n";
}

nn::Network build_network(const ArchDescriptor& desc) {
  nn::Network net(Dims{3, desc.input_height, desc.input_width});
  int count = 0;
  for (const auto& l : desc.layers) {
    const std::string id = l.value("id", "layer" + std::to_string(count));
    const std::string type = l.value("type", "");
    const Dims in = net.output_dims();
    try {
      if (type == "conv2d") {
        net.add(std::make_unique<nn::Conv2d>(id, in.channels, l.at("filters").get<int>(),
                                             l.value("kernel", 3), l.value("stride", 1),
                                             nn::parse_activation(l.value("activation", "linear")),
                                             l.value("slope", 0.2)));
      } else if (type == "batch_norm") {
        net.add(std::make_unique<nn::BatchNorm2d>(id, in.channels, l.value("eps", 1e-5)));
      } else if (type == "relu") {
        net.add(std::make_unique<nn::ActivationLayer>(id, nn::ActivationLayer::Kind::relu));
      } else if (type == "leaky_relu") {
        net.add(std::make_unique<nn::ActivationLayer>(id, nn::ActivationLayer::Kind::leaky_relu,
                                                      l.value("slope", 0.2)));
      } else if (type == "sigmoid") {
        net.add(std::make_unique<nn::ActivationLayer>(id, nn::ActivationLayer::Kind::sigmoid));
      } else if (type == "softmax") {
        net.add(std::make_unique<nn::ActivationLayer>(id, nn::ActivationLayer::Kind::softmax));
      } else if (type == "global_avg_pool") {
        net.add(std::make_unique<nn::GlobalAvgPool>(id));
      } else if (type == "dense") {
        net.add(std::make_unique<nn::Dense>(id, static_cast<int>(in.count()), l.at("units").get<int>(),
                                            nn::parse_activation(l.value("activation", "linear"))));
      } else {
        throw ConfigError("layer '" + id + "': unknown type '" + type + "'");
      }
    } catch (const json::exception& e) {
      throw ConfigError("layer '" + id + "': " + e.what());
    }
    ++count;
  }
  if (net.size() == 0) throw ConfigError("descriptor declares no layers");
  const Dims out = net.output_dims();
  if (out.height != 1 || out.width != 1 || out.channels != static_cast<int>(desc.class_names.size()))
    throw ConfigError("final layer must produce one score per class (" +
                      std::to_string(desc.class_names.size()) + "), got " + to_string(out));
  return net;
}

std::string LatentTensor::digest() const { return sha256_hex(values.data); }

namespace {

bool ends_in_probability(const nn::Network& net) {
  const auto kind = net.layer(net.size() - 1).kind();
  return kind == "sigmoid" || kind == "softmax";
}

}  // namespace

ModelBundle::ModelBundle(ArchDescriptor desc, nn::Network net)
    : desc_(std::move(desc)), mutex_(std::make_shared<std::mutex>()) {
  const auto latent = net.find(desc_.latent_layer_id);
  if (!latent)
    throw ConfigError("latent_layer_id '" + desc_.latent_layer_id + "' does not name a layer");
  latent_index_ = *latent;
  if (latent_index_ + 1 >= net.size())
    throw ConfigError("latent layer '" + desc_.latent_layer_id + "' must precede the classifier head");
  if (ends_in_probability(net)) {
    score_index_ = net.size() - 2;
    score_kind_ = "logit";
  } else {
    const auto* dense = dynamic_cast<const nn::Dense*>(&net.layer(net.size() - 1));
    if (dense == nullptr || dense->activation() != nn::Activation::sigmoid)
      throw ConfigError("classifier must end in a sigmoid or softmax to produce posteriors");
    score_index_ = net.size() - 1;
    score_kind_ = "posterior";
  }
  if (score_index_ <= latent_index_)
    throw ConfigError("no layer between the latent layer and the class scores");
  net_ = std::make_shared<const nn::Network>(std::move(net));
  digest_ = net_->digest();
}

ModelBundle load_classifier(const std::string& weights_path, const ArchDescriptor& desc) {
  nn::Network net = build_network(desc);
  nn::load_weights(weights_path, net);
  return ModelBundle(desc, std::move(net));
}

ModelBundle load_classifier(const std::string& weights_path, const std::string& descriptor_path) {
  return load_classifier(weights_path, ArchDescriptor::load(descriptor_path));
}

ModelBundle make_classifier(const ArchDescriptor& desc, unsigned long long seed) {
  nn::Network net = build_network(desc);
  net.initialize(seed);
  return ModelBundle(desc, std::move(net));
}

Encoder::Encoder(const ModelBundle& bundle)
    : net_(bundle.shared_network()), end_(bundle.latent_index() + 1),
      digest_(net_->digest(0, end_)) {}

Tensor Encoder::forward(const Tensor& images, nn::Tape* tape) const {
  return net_->forward(images, nn::Mode::eval, tape, 0, end_);
}

Tensor Encoder::backward_to_input(const nn::Tape& tape, const Tensor& grad_latent) const {
  return net_->backward(tape, grad_latent, nullptr, true);
}

Encoder truncate_encoder(const ModelBundle& bundle) { return Encoder(bundle); }

void validate_input(const ModelBundle& bundle, const Image& x) {
  const Dims in = bundle.input_dims();
  if (x.height != in.height || x.width != in.width || x.channels != 3)
    throw ShapeError("input image is " + std::to_string(x.height) + "x" + std::to_string(x.width) +
                     "x" + std::to_string(x.channels) + ", model expects " + to_string(in));
  for (double v : x.data)
    if (!(v >= 0.0 && v <= 1.0)) throw ArgumentError("input image values must lie in [0,1]");
}

LatentTensor encode(const Encoder& enc, const Image& x) {
  const Dims in = enc.input_dims();
  if (x.height != in.height || x.width != in.width || x.channels != 3)
    throw ShapeError("encode: input shape does not match encoder input " + to_string(in));
  LatentTensor z{enc.forward(to_tensor(x)), enc.digest()};
  if (!z.values.all_finite()) throw NumericError("encode: non-finite latent");
  return z;
}

namespace {
ClassScores scores_of(const Tensor& out, int n) {
  ClassScores s;
  s.posteriors.resize(static_cast<std::size_t>(out.channels));
  for (int c = 0; c < out.channels; ++c) s.posteriors[static_cast<std::size_t>(c)] = out.at(c, n, 0, 0);
  return s;
}
}  // namespace

ClassScores predict(const ModelBundle& bundle, const Image& x) {
  validate_input(bundle, x);
  return scores_of(bundle.network().forward(to_tensor(x), nn::Mode::eval), 0);
}

std::vector<ClassScores> predict(const ModelBundle& bundle, std::span<const Image> xs) {
  for (const auto& x : xs) validate_input(bundle, x);
  std::vector<ClassScores> out;
  constexpr std::size_t chunk = 64;
  for (std::size_t b = 0; b < xs.size(); b += chunk) {
    const auto part = xs.subspan(b, std::min(chunk, xs.size() - b));
    const Tensor y = bundle.network().forward(to_tensor(part), nn::Mode::eval);
    for (int n = 0; n < y.batch; ++n) out.push_back(scores_of(y, n));
  }
  return out;
}

ClassScores predict_from_latent(const ModelBundle& bundle, const LatentTensor& z) {
  const Tensor y = bundle.network().forward(z.values, nn::Mode::eval, nullptr, bundle.latent_index() + 1);
  return scores_of(y, 0);
}

std::set<int> prediction_set(const ClassScores& scores, double threshold) {
  if (!(threshold > 0.0 && threshold < 1.0)) throw ArgumentError("threshold must lie in (0,1)");
  std::set<int> out;
  for (std::size_t i = 0; i < scores.posteriors.size(); ++i)
    if (scores.posteriors[i] >= threshold) out.insert(static_cast<int>(i));
  return out;
}

int top_class(const ClassScores& scores) {
  if (scores.posteriors.empty()) throw ArgumentError("top_class: empty score vector");
  // max_element returns the first maximum, i.e. the lowest index on ties.
  return static_cast<int>(std::ranges::max_element(scores.posteriors) - scores.posteriors.begin());
}

}  // namespace pv
