#include "pv/decoder.hpp"

#include <algorithm>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <sstream>

#include "pv/digest.hpp"
#include "pv/errors.hpp"

namespace pv {

using nlohmann::json;

int DecoderConfig::required_stages(const Dims& latent, int out_height, int out_width) {
  if (latent.height <= 0 || latent.width <= 0) throw ConfigError("latent spatial size must be positive");
  int stages = 0;
  while ((latent.height << stages) < out_height || (latent.width << stages) < out_width) ++stages;
  return stages;
}

DecoderConfig DecoderConfig::halving(const Dims& latent, int out_height, int out_width,
                                     int first_channels, int conv_layers, int min_channels) {
  DecoderConfig cfg;
  cfg.latent = latent;
  cfg.output_height = out_height;
  cfg.output_width = out_width;
  const int n = required_stages(latent, out_height, out_width);
  int ch = first_channels;
  for (int i = 0; i < n; ++i) {
    cfg.stages.push_back({std::max(ch, min_channels), conv_layers, false});
    ch /= 2;
  }
  return cfg;
}

DecoderConfig DecoderConfig::full_scale() { return halving({2048, 7, 7}, 224, 224, 512, 2, 32); }

DecoderConfig DecoderConfig::desk() { return halving({64, 4, 4}, 32, 32, 32, 2, 8); }

void DecoderConfig::validate() const {
  if (latent.channels <= 0 || latent.height <= 0 || latent.width <= 0)
    throw ConfigError("decoder latent shape must be positive");
  if (output_height <= 0 || output_width <= 0) throw ConfigError("decoder output shape must be positive");
  if (kernel != 3) throw ConfigError("decoder kernel is fixed at 3x3");
  if (!(leaky_slope > 0.0)) throw ConfigError("leaky_slope must be positive");
  if (stages.empty()) throw ConfigError("decoder needs at least one upsampling stage");
  const int n = static_cast<int>(stages.size());
  if ((latent.height << n) < output_height || (latent.width << n) < output_width)
    throw ConfigError(std::to_string(n) + " upsampling stages cannot reach " +
                      std::to_string(output_height) + "x" + std::to_string(output_width));
  for (std::size_t i = 0; i < stages.size(); ++i) {
    if (stages[i].skip) throw ConfigError("stage " + std::to_string(i) + " declares a skip connection");
    if (stages[i].channels <= 0 || stages[i].conv_layers < 0)
      throw ConfigError("stage " + std::to_string(i) + " has invalid channel/layer counts");
  }
}

std::vector<std::pair<int, int>> DecoderConfig::planned_resolutions() const {
  std::vector<std::pair<int, int>> r{{latent.height, latent.width}};
  for (std::size_t i = 0; i < stages.size(); ++i) r.emplace_back(r.back().first * 2, r.back().second * 2);
  return r;
}

json DecoderConfig::to_json() const {
  json st = json::array();
  for (const auto& s : stages) st.push_back({{"channels", s.channels}, {"conv_layers", s.conv_layers}});
  return {{"latent_shape", {latent.width, latent.height, latent.channels}},
          {"output_shape", {output_width, output_height, 3}},
          {"stages", st},
          {"leaky_slope", leaky_slope},
          {"kernel", {kernel, kernel}}};
}

DecoderConfig DecoderConfig::from_json(const json& j) {
  DecoderConfig cfg;
  try {
    const auto& ls = j.at("latent_shape");
    cfg.latent = {ls.at(2).get<int>(), ls.at(1).get<int>(), ls.at(0).get<int>()};
    const auto& os = j.at("output_shape");
    cfg.output_width = os.at(0).get<int>();
    cfg.output_height = os.at(1).get<int>();
    for (const auto& s : j.at("stages"))
      cfg.stages.push_back({s.at("channels").get<int>(), s.value("conv_layers", 2), s.value("skip", false)});
    cfg.leaky_slope = j.value("leaky_slope", 0.2);
    if (j.contains("kernel")) cfg.kernel = j.at("kernel").at(0).get<int>();
  } catch (const json::exception& e) {
    throw ConfigError(std::string("malformed decoder config: ") + e.what());
  }
  cfg.validate();
  return cfg;
}

std::string Reconstruction::digest() const { return sha256_hex(values.data); }

Decoder build_decoder(const DecoderConfig& cfg, unsigned long long seed) {
  cfg.validate();
  nn::Network net(cfg.latent);
  int in = cfg.latent.channels;
  for (std::size_t s = 0; s < cfg.stages.size(); ++s) {
    const auto& st = cfg.stages[s];
    const std::string tag = std::to_string(s + 1);
    net.add(std::make_unique<nn::ConvTranspose2d>("up" + tag, in, st.channels, cfg.kernel,
                                                  nn::Activation::linear));
    net.add(std::make_unique<nn::BatchNorm2d>("bn" + tag, st.channels));
    for (int c = 0; c < st.conv_layers; ++c)
      net.add(std::make_unique<nn::Conv2d>("conv" + tag + "_" + std::to_string(c + 1), st.channels,
                                           st.channels, cfg.kernel, 1, nn::Activation::leaky_relu,
                                           cfg.leaky_slope));
    in = st.channels;
  }
  net.add(std::make_unique<nn::Conv2d>("output", in, 3, cfg.kernel, 1, nn::Activation::sigmoid));
  const Dims out = net.output_dims();
  if (out.height != cfg.output_height || out.width != cfg.output_width)
    net.add(std::make_unique<nn::CenterCrop>("fit", cfg.output_height, cfg.output_width));
  net.initialize(seed);
  return Decoder(cfg, std::move(net));
}

Tensor Decoder::reconstruct(const Tensor& latents) const {
  return net_.forward(latents, nn::Mode::eval);
}

Reconstruction decode(const Decoder& dec, const LatentTensor& z) {
  if (z.dims() != dec.config().latent)
    throw ShapeError("decode: latent " + to_string(z.dims()) + " does not match decoder latent " +
                     to_string(dec.config().latent));
  if (!z.values.all_finite()) throw NumericError("decode: non-finite latent");
  Reconstruction r;
  r.values = to_image(dec.reconstruct(z.values));
  // Keep the sigmoid range open even where exp() saturates.
  constexpr double eps = 1e-12;
  for (double& v : r.values.data) v = std::clamp(v, eps, 1.0 - eps);
  r.source_latent_digest = z.digest();
  r.decoder_digest = dec.digest();
  return r;
}

namespace {
constexpr std::string_view kCheckpointMagic = "PVCKPT1\n";
}

void save_decoder(const std::string& path, const Decoder& dec, const json& provenance) {
  json meta{{"decoder_config", dec.config().to_json()},
            {"decoder_digest", dec.digest()},
            {"provenance", provenance}};
  const std::string text = meta.dump();
  const std::string blob = nn::serialize_weights(dec.network());
  std::ofstream f(path, std::ios::binary);
  if (!f) throw LoadError("cannot write checkpoint '" + path + "'");
  f.write(kCheckpointMagic.data(), static_cast<std::streamsize>(kCheckpointMagic.size()));
  const std::uint64_t len = text.size();
  f.write(reinterpret_cast<const char*>(&len), sizeof(len));
  f.write(text.data(), static_cast<std::streamsize>(text.size()));
  f.write(blob.data(), static_cast<std::streamsize>(blob.size()));
}

std::pair<Decoder, json> load_decoder(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw LoadError("checkpoint '" + path + "' not found");
  std::ostringstream ss;
  ss << f.rdbuf();
  const std::string data = ss.str();
  if (data.compare(0, kCheckpointMagic.size(), kCheckpointMagic) != 0)
    throw LoadError("'" + path + "' is not a decoder checkpoint");
  std::size_t pos = kCheckpointMagic.size();
  if (data.size() < pos + sizeof(std::uint64_t)) throw LoadError("checkpoint truncated");
  std::uint64_t len = 0;
  std::memcpy(&len, data.data() + pos, sizeof(len));
  pos += sizeof(len);
  if (data.size() < pos + len) throw LoadError("checkpoint truncated");
  json meta;
  try {
    meta = json::parse(data.substr(pos, len));
  } catch (const json::exception& e) {
    throw LoadError(std::string("checkpoint metadata is corrupt: ") + e.what());
  }
  pos += len;
  Decoder dec = build_decoder(DecoderConfig::from_json(meta.at("decoder_config")), 0);
  nn::deserialize_weights(std::string_view(data).substr(pos), dec.network());
  if (meta.value("decoder_digest", "") != dec.digest())
    throw LoadError("checkpoint '" + path + "' fails its digest check");
  return {std::move(dec), meta.value("provenance", json::object())};
}

}  // namespace pv
