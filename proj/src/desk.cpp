#include "pv/desk.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <numeric>

#include "pv/config.hpp"
#include "pv/decoder.hpp"
#include "pv/errors.hpp"
#include "pv/image_io.hpp"
#include "pv/nn/adam.hpp"
#include "pv/trainer.hpp"

namespace pv::desk {

namespace fs = std::filesystem;
using nlohmann::json;

const std::vector<std::string>& class_names() {
  static const std::vector<std::string> names = {"disk",     "square",   "triangle", "ring",    "plus",
                                                 "hstripes", "vstripes", "diamond",  "checker", "xmark"};
  return names;
}

ArchDescriptor descriptor() {
  ArchDescriptor d;
  d.name = "desk-6conv";
  d.input_width = kSide;
  d.input_height = kSide;
  d.class_names = class_names();
  d.latent_layer_id = "conv6";
  auto conv = [](const char* id, int filters, int stride) {
    return json{{"id", id}, {"type", "conv2d"}, {"filters", filters}, {"kernel", 3}, {"stride", stride},
                {"activation", "relu"}};
  };
  d.layers = json::array({conv("conv1", 16, 1), conv("conv2", 16, 2), conv("conv3", 32, 1), conv("conv4", 32, 2),
                          conv("conv5", 64, 1), conv("conv6", 64, 2),
                          {{"id", "pool"}, {"type", "global_avg_pool"}},
                          {{"id", "logits"}, {"type", "dense"}, {"units", 10}, {"activation", "linear"}},
                          {{"id", "posteriors"}, {"type", "sigmoid"}}});
  return d;
}

namespace {

// Coverage test in shape-local coordinates u, v in [-1, 1] (v points down).
bool inside(int cls, double u, double v) {
  const double au = std::abs(u), av = std::abs(v);
  switch (cls) {
    case 0: return u * u + v * v <= 1.0;
    case 1: return au <= 0.8 && av <= 0.8;
    case 2: return v >= -0.9 && v <= 0.85 && au <= (v + 0.9) * 0.55;
    case 3: {
      const double r = std::sqrt(u * u + v * v);
      return r >= 0.55 && r <= 1.0;
    }
    case 4: return (au <= 0.3 && av <= 1.0) || (av <= 0.3 && au <= 1.0);
    case 5: return au <= 0.9 && av <= 0.9 && static_cast<int>(std::floor((v + 1.0) * 2.5)) % 2 == 0;
    case 6: return au <= 0.9 && av <= 0.9 && static_cast<int>(std::floor((u + 1.0) * 2.5)) % 2 == 0;
    case 7: return au + av <= 1.0;
    case 8:
      return au <= 0.9 && av <= 0.9 &&
             (static_cast<int>(std::floor((u + 1.0) * 2.0)) + static_cast<int>(std::floor((v + 1.0) * 2.0))) % 2 == 0;
    case 9: return au <= 1.0 && av <= 1.0 && (std::abs(u - v) <= 0.35 || std::abs(u + v) <= 0.35);
    default: return false;
  }
}

struct Box {
  int x, y, size;
  bool overlaps(const Box& o) const {
    return x < o.x + o.size + 1 && o.x < x + size + 1 && y < o.y + o.size + 1 && o.y < y + size + 1;
  }
};

std::array<double, 3> random_colour(std::mt19937_64& rng) {
  std::uniform_real_distribution<double> u(0.0, 1.0);
  return {u(rng), u(rng), u(rng)};
}

double luminance(const std::array<double, 3>& c) { return 0.299 * c[0] + 0.587 * c[1] + 0.114 * c[2]; }

}  // namespace

SyntheticSample render_sample(std::mt19937_64& rng) {
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  SyntheticSample s{Image(kSide, kSide, 3), {}};

  const auto c0 = random_colour(rng), c1 = random_colour(rng);
  const double angle = unit(rng) * 6.283185307179586;
  const double dx = std::cos(angle), dy = std::sin(angle);
  for (int y = 0; y < kSide; ++y)
    for (int x = 0; x < kSide; ++x) {
      const double t = 0.5 + 0.5 * ((x - 15.5) * dx + (y - 15.5) * dy) / 22.0;
      for (int k = 0; k < 3; ++k) s.image.at(y, x, k) = 0.35 * (c0[k] + (c1[k] - c0[k]) * t) + 0.3;
    }
  const double bg_lum = luminance({s.image.at(16, 16, 0), s.image.at(16, 16, 1), s.image.at(16, 16, 2)});

  const int objects = unit(rng) < 0.5 ? 1 : 2;
  std::vector<Box> boxes;
  std::vector<int> classes;
  for (int o = 0; o < objects; ++o) {
    int cls = 0;
    do cls = static_cast<int>(rng() % 10);
    while (std::ranges::find(classes, cls) != classes.end());
    // A minority of objects are small and faint, which keeps the classifier fallible.
    const bool hard = unit(rng) < 0.12;
    const int size = hard ? 7 + static_cast<int>(rng() % 3) : 11 + static_cast<int>(rng() % 5);
    Box box{};
    bool placed = false;
    for (int attempt = 0; attempt < 50 && !placed; ++attempt) {
      box = {static_cast<int>(rng() % (kSide - size + 1)), static_cast<int>(rng() % (kSide - size + 1)), size};
      placed = std::ranges::none_of(boxes, [&](const Box& b) { return b.overlaps(box); });
    }
    if (!placed) break;
    boxes.push_back(box);
    classes.push_back(cls);

    std::array<double, 3> colour = random_colour(rng);
    const double target = bg_lum > 0.55 ? 0.1 : 0.9;
    const double mix = hard ? 0.35 : 0.7;
    for (auto& c : colour) c = (1.0 - mix) * c + mix * target;
    for (int y = box.y; y < box.y + size; ++y)
      for (int x = box.x; x < box.x + size; ++x) {
        int hits = 0;
        for (int sy = 0; sy < 3; ++sy)
          for (int sx = 0; sx < 3; ++sx) {
            const double u = ((x - box.x) + (sx + 0.5) / 3.0) / size * 2.0 - 1.0;
            const double v = ((y - box.y) + (sy + 0.5) / 3.0) / size * 2.0 - 1.0;
            hits += inside(cls, u, v);
          }
        const double a = hits / 9.0;
        for (int k = 0; k < 3; ++k) s.image.at(y, x, k) = (1.0 - a) * s.image.at(y, x, k) + a * colour[static_cast<std::size_t>(k)];
      }
  }
  std::normal_distribution<double> noise(0.0, 0.03);
  for (auto& v : s.image.data) v = std::clamp(v + noise(rng), 0.0, 1.0);
  s.targets.insert(classes.begin(), classes.end());
  return s;
}

DatasetManifest generate_dataset(const fs::path& root, const DatasetSpec& spec) {
  if (spec.train < 0 || spec.eval < 0) throw ArgumentError("dataset sizes must be non-negative");
  DatasetManifest m;
  m.root = root;
  m.class_names = class_names();
  fs::create_directories(root / "images");
  std::mt19937_64 rng(spec.seed);
  const int total = spec.train + spec.eval;
  for (int i = 0; i < total; ++i) {
    SyntheticSample s = render_sample(rng);
    char id[16];
    std::snprintf(id, sizeof id, "s%05d", i);
    Sample sample{id, std::string(id) + ".png", s.targets, i < spec.train ? "train" : "eval"};
    // Stored 8-bit; quantise so the in-memory and on-disk images agree.
    write_png(m.image_path(sample), s.image);
    m.samples.push_back(std::move(sample));
  }
  write_manifest(m);
  return m;
}

ModelBundle fit_classifier(const ArchDescriptor& desc, const ImageSet& data, const std::vector<std::set<int>>& targets,
                           const FitOptions& opts) {
  if (static_cast<int>(targets.size()) != data.size()) throw ArgumentError("fit_classifier: one target set per image");
  if (opts.batch_size <= 0 || opts.epochs < 0) throw ArgumentError("fit_classifier: invalid batch size or epochs");
  nn::Network net = build_network(desc);
  net.initialize(opts.seed);
  const auto logits = net.find("logits");
  const std::size_t score_end = logits ? *logits + 1 : net.size() - 1;
  const int n_classes = static_cast<int>(desc.class_names.size());

  nn::Adam adam(net, opts.learning_rate);
  std::mt19937_64 rng(opts.seed ^ 0x5eedULL);
  std::vector<int> order(static_cast<std::size_t>(data.size()));
  std::iota(order.begin(), order.end(), 0);
  for (int epoch = 1; epoch <= opts.epochs; ++epoch) {
    std::shuffle(order.begin(), order.end(), rng);
    double total = 0.0;
    for (std::size_t b = 0; b < order.size(); b += static_cast<std::size_t>(opts.batch_size)) {
      const std::size_t e = std::min(order.size(), b + static_cast<std::size_t>(opts.batch_size));
      const std::span<const int> idx(order.data() + b, e - b);
      const int bs = static_cast<int>(idx.size());
      nn::Tape tape;
      const Tensor z = net.forward(gather(data.images, idx), nn::Mode::train, &tape, 0, score_end);
      Tensor grad(z.channels, z.batch, 1, 1);
      for (int n = 0; n < bs; ++n) {
        const auto& t = targets[static_cast<std::size_t>(idx[static_cast<std::size_t>(n)])];
        for (int c = 0; c < n_classes; ++c) {
          const double logit = z.at(c, n, 0, 0);
          const double y = t.contains(c) ? 1.0 : 0.0;
          // Stable BCE on logits.
          total += std::max(logit, 0.0) - logit * y + std::log1p(std::exp(-std::abs(logit)));
          grad.at(c, n, 0, 0) = (1.0 / (1.0 + std::exp(-logit)) - y) / bs;
        }
      }
      nn::Gradients grads = net.zero_gradients();
      net.backward(tape, grad, &grads, false);
      adam.step(net, grads);
      net.commit(tape);
    }
    if (opts.on_epoch) opts.on_epoch(epoch, total / data.size());
  }
  return ModelBundle(desc, std::move(net));
}

TrainConfig train_config() {
  TrainConfig tc;
  tc.batch_size = 16;
  tc.epochs = 30;
  tc.learning_rate = 3e-3;
  tc.normalization_mode = NormalizationMode::relative;
  tc.dataset_id = "desk-train";
  return tc;
}

FixturePaths fixture_paths(const fs::path& root) {
  return {root, root / "dataset", root / "model" / "desk.json", root / "model" / "desk.weights",
          root / "decoder" / "desk.ckpt", root / "config.json"};
}

FixturePaths write_fixture(const fs::path& root, const FixtureOptions& opts) {
  const FixturePaths p = fixture_paths(root);
  const json stamp = {{"train", opts.dataset.train},
                      {"eval", opts.dataset.eval},
                      {"data_seed", opts.dataset.seed},
                      {"epochs", opts.classifier.epochs},
                      {"batch_size", opts.classifier.batch_size},
                      {"learning_rate", opts.classifier.learning_rate},
                      {"fit_seed", opts.classifier.seed},
                      {"decoder_epochs", opts.decoder_epochs},
                      {"decoder_samples", opts.decoder_samples}};
  const fs::path stamp_path = root / "fixture.json";
  if (fs::exists(stamp_path) && fs::exists(p.config) && fs::exists(p.decoder)) {
    std::ifstream f(stamp_path);
    const json old = json::parse(f, nullptr, false);
    if (old == stamp) return p;
  }
  auto log = [&](const std::string& msg) {
    if (opts.verbose) std::fprintf(stderr, "fixture: %s\n", msg.c_str());
  };

  log("rendering dataset");
  const DatasetManifest manifest = generate_dataset(p.dataset, opts.dataset);
  const ArchDescriptor desc = descriptor();
  fs::create_directories(p.descriptor.parent_path());
  desc.save(p.descriptor.string());

  const auto train_samples = manifest.split("train");
  const ImageSet train = load_image_set(manifest, train_samples, kSide, kSide, "desk-train");
  std::vector<std::set<int>> targets;
  for (const auto& s : train_samples) targets.push_back(s.targets);
  FitOptions fit = opts.classifier;
  fit.on_epoch = [&](int epoch, double bce) { log("classifier epoch " + std::to_string(epoch) + " bce " + std::to_string(bce)); };
  const ModelBundle bundle = fit_classifier(desc, train, targets, fit);
  save_weights(p.weights.string(), bundle.network());

  log("training preview decoder");
  const Encoder enc(bundle);
  std::vector<int> head(static_cast<std::size_t>(std::min(opts.decoder_samples, train.size())));
  std::iota(head.begin(), head.end(), 0);
  ImageSet subset{"desk-train-head", {}, gather(train.images, head)};
  for (int i : head) subset.ids.push_back(train.ids[static_cast<std::size_t>(i)]);
  TrainConfig tc = train_config();
  tc.epochs = opts.decoder_epochs;
  tc.dataset_id = subset.dataset_id;
  Checkpoint ck = train_decoder(tc, enc, build_decoder(DecoderConfig::desk(), 3), subset);
  fs::create_directories(p.decoder.parent_path());
  ck.save(p.decoder);

  AppConfig cfg;
  cfg.model_descriptor = "model/desk.json";
  cfg.model_weights = "model/desk.weights";
  cfg.decoder_checkpoint = "decoder/desk.ckpt";
  cfg.decoder_config = DecoderConfig::desk();
  cfg.dataset_root = "dataset";
  cfg.eval_split = "eval";
  cfg.train = tc;
  cfg.asset_dir = "assets";
  cfg.port = 0;
  cfg.save(p.config);
  std::ofstream(stamp_path) << stamp.dump(2) << "\n";
  return p;
}

}  // namespace pv::desk
