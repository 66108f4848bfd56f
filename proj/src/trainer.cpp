#include "pv/trainer.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <ctime>
#include <numeric>
#include <random>
#include <sstream>

#include "pv/errors.hpp"
#include "pv/nn/adam.hpp"

namespace pv {

using nlohmann::json;

void TrainConfig::validate() const {
  loss_weights.validate();
  if (batch_size < 1) throw ArgumentError("batch_size must be at least 1");
  if (epochs < 1) throw ArgumentError("epochs must be at least 1");
  if (!(learning_rate > 0.0)) throw ArgumentError("learning_rate must be positive");
}

json TrainConfig::to_json() const {
  return {{"loss_weights", {loss_weights.mse, loss_weights.ssim, loss_weights.dsim}},
          {"batch_size", batch_size},
          {"epochs", epochs},
          {"learning_rate", learning_rate},
          {"seed", seed},
          {"normalization_mode", to_string(normalization_mode)},
          {"dataset_id", dataset_id},
          {"ssim", {{"window", ssim.window}, {"sigma", ssim.sigma}, {"k1", ssim.k1}, {"k2", ssim.k2}}}};
}

TrainConfig TrainConfig::from_json(const json& j) {
  TrainConfig c;
  try {
    if (j.contains("loss_weights")) {
      const auto& w = j.at("loss_weights");
      c.loss_weights = {w.at(0).get<double>(), w.at(1).get<double>(), w.at(2).get<double>()};
    }
    c.batch_size = j.value("batch_size", c.batch_size);
    c.epochs = j.value("epochs", c.epochs);
    c.learning_rate = j.value("learning_rate", c.learning_rate);
    c.seed = j.value("seed", c.seed);
    if (j.contains("normalization_mode"))
      c.normalization_mode = parse_normalization_mode(j.at("normalization_mode").get<std::string>());
    c.dataset_id = j.value("dataset_id", c.dataset_id);
    if (j.contains("ssim")) {
      const auto& s = j.at("ssim");
      c.ssim.window = s.value("window", c.ssim.window);
      c.ssim.sigma = s.value("sigma", c.ssim.sigma);
      c.ssim.k1 = s.value("k1", c.ssim.k1);
      c.ssim.k2 = s.value("k2", c.ssim.k2);
    }
  } catch (const json::exception& e) {
    throw ConfigError(std::string("malformed training config: ") + e.what());
  }
  return c;
}

std::string TrainConfig::command_line() const {
  std::ostringstream s;
  s.precision(17);
  s << "pv train --epochs " << epochs << " --batch-size " << batch_size << " --lr " << learning_rate
    << " --seed " << seed << " --mode " << to_string(normalization_mode) << " --alpha "
    << loss_weights.mse << "," << loss_weights.ssim << "," << loss_weights.dsim << " --dataset-id '"
    << dataset_id << "' --ssim-window " << ssim.window;
  return s.str();
}

json Checkpoint::provenance() const {
  json hist = json::array(), ev = json::array();
  for (std::size_t i = 0; i < history.size(); ++i) hist.push_back(history[i].to_json(static_cast<long long>(i + 1)));
  for (std::size_t i = 0; i < eval_history.size(); ++i) ev.push_back(eval_history[i].to_json(static_cast<long long>(i + 1)));
  return {{"train_config", config.to_json()},
          {"dataset_id", config.dataset_id},
          {"loss_weights", {config.loss_weights.mse, config.loss_weights.ssim, config.loss_weights.dsim}},
          {"seed", config.seed},
          {"encoder_digest", encoder_digest},
          {"history", hist},
          {"eval_history", ev},
          {"best_epoch", best_epoch},
          {"command", config.command_line()},
          {"timing", timing}};
}

void Checkpoint::save(const std::filesystem::path& path) const { save_decoder(path.string(), decoder, provenance()); }

Checkpoint Checkpoint::load(const std::filesystem::path& path) {
  auto [dec, prov] = load_decoder(path.string());
  Checkpoint c{std::move(dec), {}, {}, {}, {}, -1, json::object()};
  try {
    c.config = TrainConfig::from_json(prov.value("train_config", json::object()));
    for (const auto& h : prov.value("history", json::array())) c.history.push_back(LossReport::from_json(h));
    for (const auto& h : prov.value("eval_history", json::array())) c.eval_history.push_back(LossReport::from_json(h));
    c.encoder_digest = prov.value("encoder_digest", "");
    c.best_epoch = prov.value("best_epoch", -1);
    c.timing = prov.value("timing", json::object());
  } catch (const json::exception& e) {
    throw LoadError(std::string("checkpoint provenance is malformed: ") + e.what());
  }
  return c;
}

namespace {

LatentBatch encode_all(const Encoder& enc, const Tensor& images) {
  constexpr int chunk = 64;
  std::vector<Tensor> parts;
  for (int b = 0; b < images.batch; b += chunk) {
    std::vector<int> idx(static_cast<std::size_t>(std::min(chunk, images.batch - b)));
    std::iota(idx.begin(), idx.end(), b);
    parts.push_back(enc.forward(gather(images, idx)));
  }
  return {concat(parts), enc.digest()};
}

std::string utc_now() {
  const std::time_t t = std::time(nullptr);
  char buf[32];
  std::strftime(buf, sizeof buf, "%Y-%m-%dT%H:%M:%SZ", std::gmtime(&t));
  return buf;
}

}  // namespace

Checkpoint train_decoder(const TrainConfig& cfg, const Encoder& enc, Decoder dec, const ImageSet& data,
                         const TrainOptions& opts) {
  cfg.validate();
  if (data.size() == 0) throw ArgumentError("train_decoder: empty dataset");
  if (dec.config().latent != enc.latent_dims())
    throw ConfigError("decoder latent " + to_string(dec.config().latent) + " does not match encoder latent " +
                      to_string(enc.latent_dims()));
  const Dims in = enc.input_dims();
  if (data.images.dims() != in)
    throw IngestionError("training images are " + to_string(data.images.dims()) + ", encoder expects " + to_string(in));
  if (dec.config().output_height != in.height || dec.config().output_width != in.width)
    throw ConfigError("decoder output size does not match the encoder input size");

  const auto started = std::chrono::steady_clock::now();
  const std::string encoder_digest = enc.current_digest();
  const LatentBatch latents = encode_all(enc, data.images);

  Checkpoint ck{std::move(dec), cfg, {}, {}, encoder_digest, -1,
                {{"started_at", utc_now()}}};
  nn::Network& net = ck.decoder.network();
  nn::Adam adam(net, cfg.learning_rate);
  std::mt19937_64 rng(cfg.seed);
  std::vector<int> order(static_cast<std::size_t>(data.size()));
  std::iota(order.begin(), order.end(), 0);
  const auto& w = cfg.loss_weights;
  double best_eval = INFINITY;
  std::string best_blob;
  long long step = 0;

  for (int epoch = 1; epoch <= cfg.epochs; ++epoch) {
    std::shuffle(order.begin(), order.end(), rng);
    LossReport epoch_report{0, 0, 0, 0, cfg.normalization_mode, cfg.batch_size};
    int batches = 0;
    for (std::size_t b = 0; b < order.size(); b += static_cast<std::size_t>(cfg.batch_size)) {
      const std::size_t e = std::min(order.size(), b + static_cast<std::size_t>(cfg.batch_size));
      const std::span<const int> idx(order.data() + b, e - b);
      const Tensor x = gather(data.images, idx);
      const LatentBatch z{gather(latents.values, idx), latents.source_digest};

      nn::Tape tape;
      const Tensor y = net.forward(z.values, nn::Mode::train, &tape);
      Tensor g_mse, g_ssim, g_dsim;
      LossReport r;
      r.mode = cfg.normalization_mode;
      r.batch_size = static_cast<int>(idx.size());
      r.mse = mse_loss(x, y, cfg.normalization_mode, &g_mse);
      r.ssim_loss = ssim_loss(x, y, cfg.normalization_mode, cfg.ssim, &g_ssim);
      r.dsim = dsim_loss(enc, y, z, cfg.normalization_mode, &g_dsim);
      r.composite = composite_loss(w, r.mse, r.ssim_loss, r.dsim);
      ++step;
      if (!std::isfinite(r.composite)) {
        std::string where = "epoch " + std::to_string(epoch) + ", step " + std::to_string(step);
        if (!opts.checkpoint_dir.empty()) {
          std::filesystem::create_directories(opts.checkpoint_dir);
          ck.timing["diverged_at"] = where;
          const auto path = opts.checkpoint_dir / "diverged.ckpt";
          ck.save(path);
          where += "; diagnostic checkpoint " + path.string();
        }
        throw NumericError("training diverged (non-finite loss) at " + where);
      }
      Tensor grad(y.channels, y.batch, y.height, y.width);
      for (std::size_t i = 0; i < grad.size(); ++i)
        grad.data[i] = w.mse * g_mse.data[i] + w.ssim * g_ssim.data[i] + w.dsim * g_dsim.data[i];
      nn::Gradients grads = net.zero_gradients();
      net.backward(tape, grad, &grads, false);
      adam.step(net, grads);
      net.commit(tape);
      if (opts.on_step) opts.on_step(r.to_json(step));

      epoch_report.mse += r.mse;
      epoch_report.ssim_loss += r.ssim_loss;
      epoch_report.dsim += r.dsim;
      epoch_report.composite += r.composite;
      ++batches;
    }
    epoch_report.mse /= batches;
    epoch_report.ssim_loss /= batches;
    epoch_report.dsim /= batches;
    epoch_report.composite /= batches;
    ck.history.push_back(epoch_report);
    if (opts.on_epoch) opts.on_epoch(epoch, epoch_report);

    bool improved = false;
    if (opts.eval_set) {
      const LossReport ev = evaluate_reconstruction(enc, ck.decoder, *opts.eval_set, w, cfg.ssim, cfg.normalization_mode);
      ck.eval_history.push_back(ev);
      if (ev.composite < best_eval) {
        best_eval = ev.composite;
        best_blob = nn::serialize_weights(net);
        ck.best_epoch = epoch;
        improved = true;
      }
    }
    if (!opts.checkpoint_dir.empty()) {
      std::filesystem::create_directories(opts.checkpoint_dir);
      ck.timing["elapsed_seconds"] = std::chrono::duration<double>(std::chrono::steady_clock::now() - started).count();
      ck.save(opts.checkpoint_dir / "last.ckpt");
      if (improved) ck.save(opts.checkpoint_dir / "best.ckpt");
    }
  }

  if (enc.current_digest() != encoder_digest)
    throw ProvenanceError("encoder weights changed during decoder training");
  if (!best_blob.empty()) nn::deserialize_weights(best_blob, net);
  ck.timing["finished_at"] = utc_now();
  ck.timing["elapsed_seconds"] = std::chrono::duration<double>(std::chrono::steady_clock::now() - started).count();
  return ck;
}

LossReport evaluate_reconstruction(const Encoder& enc, const ReconstructionModel& model, const ImageSet& eval_set,
                                   const LossWeights& weights, const SsimOptions& ssim, NormalizationMode mode) {
  if (eval_set.size() == 0) throw ArgumentError("evaluate_reconstruction: empty evaluation set");
  constexpr int chunk = 64;
  double mse = 0, ss = 0, ds = 0;
  std::size_t latent_count = 0;
  double energy = 0.0;
  for (int b = 0; b < eval_set.size(); b += chunk) {
    std::vector<int> idx(static_cast<std::size_t>(std::min(chunk, eval_set.size() - b)));
    std::iota(idx.begin(), idx.end(), b);
    const Tensor x = gather(eval_set.images, idx);
    const LatentBatch z = encode_batch(enc, x);
    const Tensor y = model.reconstruct(z.values);
    mse += mse_loss(x, y, NormalizationMode::paper_sum);
    ss += ssim_loss(x, y, NormalizationMode::paper_sum, ssim);
    ds += dsim_loss(enc, y, z, NormalizationMode::paper_sum);
    latent_count += z.values.size();
    for (double v : z.values.data) energy += v * v;
  }
  const double n = eval_set.size();
  LossReport r;
  r.mode = mode;
  r.batch_size = eval_set.size();
  if (mode == NormalizationMode::paper_sum) {
    r.mse = mse / n;
    r.ssim_loss = ss / n;
    r.dsim = ds / n;
  } else {
    r.mse = mse / static_cast<double>(eval_set.images.size());
    r.ssim_loss = ss / (3.0 * n);
    r.dsim = mode == NormalizationMode::relative && energy > 0.0 ? ds / energy : ds / static_cast<double>(latent_count);
  }
  r.composite = composite_loss(weights, r.mse, r.ssim_loss, r.dsim);
  return r;
}

Tensor mean_image_batch(const Tensor& images, int n) {
  Tensor out(images.channels, n, images.height, images.width);
  for (int c = 0; c < images.channels; ++c) {
    std::vector<double> mean(images.plane(), 0.0);
    for (int i = 0; i < images.batch; ++i) {
      auto p = images.plane(c, i);
      for (std::size_t q = 0; q < p.size(); ++q) mean[q] += p[q];
    }
    for (double& v : mean) v /= images.batch;
    for (int i = 0; i < n; ++i) std::ranges::copy(mean, out.plane(c, i).begin());
  }
  return out;
}

}  // namespace pv
