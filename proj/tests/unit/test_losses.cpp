#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <random>

#include "gradcheck.hpp"
#include "pv/errors.hpp"
#include "pv/losses.hpp"
#include "pv/nn/adam.hpp"
#include "pv/trainer.hpp"
#include "support.hpp"

using namespace pv;

namespace {

// Direct per-window SSIM: explicit 2-D Gaussian weights, no separable filtering.
double ssim_oracle(const Image& x, const Image& y, int k, int win = 11, double sigma = 1.5) {
  const double c1 = 0.01 * 0.01, c2 = 0.03 * 0.03;
  std::vector<double> w(static_cast<std::size_t>(win * win));
  double sum = 0.0;
  const double r = (win - 1) / 2.0;
  for (int i = 0; i < win; ++i)
    for (int j = 0; j < win; ++j) sum += w[i * win + j] = std::exp(-((i - r) * (i - r) + (j - r) * (j - r)) / (2 * sigma * sigma));
  for (auto& v : w) v /= sum;
  double total = 0.0;
  int windows = 0;
  for (int top = 0; top + win <= x.height; ++top)
    for (int left = 0; left + win <= x.width; ++left) {
      double mx = 0, my = 0;
      for (int i = 0; i < win; ++i)
        for (int j = 0; j < win; ++j) {
          mx += w[i * win + j] * x.at(top + i, left + j, k);
          my += w[i * win + j] * y.at(top + i, left + j, k);
        }
      double vx = 0, vy = 0, cxy = 0;
      for (int i = 0; i < win; ++i)
        for (int j = 0; j < win; ++j) {
          const double dx = x.at(top + i, left + j, k) - mx, dy = y.at(top + i, left + j, k) - my;
          vx += w[i * win + j] * dx * dx;
          vy += w[i * win + j] * dy * dy;
          cxy += w[i * win + j] * dx * dy;
        }
      total += (2 * mx * my + c1) * (2 * cxy + c2) / ((mx * mx + my * my + c1) * (vx + vy + c2));
      ++windows;
    }
  return total / windows;
}

Image constant(int h, int w, double v) { return Image(h, w, 3, v); }

}  // namespace

TEST_CASE("mse examples") {
  Tensor x(3, 1, 2, 2, 0.0), y(3, 1, 2, 2, 0.5);
  CHECK(mse_loss(x, y, NormalizationMode::paper_sum) == doctest::Approx(3.0).epsilon(1e-15));
  CHECK(mse_loss(x, y, NormalizationMode::mean) == doctest::Approx(0.25).epsilon(1e-15));
  CHECK(mse_loss(x, x, NormalizationMode::paper_sum) == 0.0);
  CHECK_THROWS_AS(mse_loss(x, Tensor(3, 1, 2, 3), NormalizationMode::mean), ShapeError);
}

TEST_CASE("ssim constant images match the closed form") {
  // Zero variances leave only the luminance term.
  const double c1 = 1e-4;
  const double closed = (2 * 0.2 * 0.8 + c1) / (0.2 * 0.2 + 0.8 * 0.8 + c1);
  CHECK(closed == doctest::Approx(0.470666078517865).epsilon(1e-12));
  const Image x = constant(16, 16, 0.2), y = constant(16, 16, 0.8);
  for (Channel c : {Channel::R, Channel::G, Channel::B}) {
    CHECK(ssim_index(x, y, c) == doctest::Approx(closed).epsilon(1e-12));
    CHECK(ssim_oracle(x, y, static_cast<int>(c)) == doctest::Approx(closed).epsilon(1e-12));
  }
}

TEST_CASE("ssim agrees with the direct per-window oracle") {
  std::mt19937_64 rng(3);
  for (int trial = 0; trial < 5; ++trial) {
    const Image x = pvtest::random_image(rng, 17, 14), y = pvtest::random_image(rng, 17, 14);
    for (int k = 0; k < 3; ++k)
      CHECK(ssim_index(x, y, static_cast<Channel>(k)) == doctest::Approx(ssim_oracle(x, y, k)).epsilon(1e-10));
  }
  SsimOptions small;
  small.window = 5;
  const Image x = pvtest::random_image(rng, 8, 8), y = pvtest::random_image(rng, 8, 8);
  CHECK(ssim_index(x, y, Channel::G, small) == doctest::Approx(ssim_oracle(x, y, 1, 5)).epsilon(1e-10));
}

TEST_CASE("ssim identity, symmetry and bounds") {
  std::mt19937_64 rng(9);
  for (int trial = 0; trial < 20; ++trial) {
    const Image x = pvtest::random_image(rng, 16, 16), y = pvtest::random_image(rng, 16, 16);
    for (int k = 0; k < 3; ++k) {
      const auto c = static_cast<Channel>(k);
      CHECK(std::abs(ssim_index(x, x, c) - 1.0) <= 1e-6);
      const double xy = ssim_index(x, y, c);
      CHECK(std::abs(xy - ssim_index(y, x, c)) <= 1e-6);
      CHECK(xy <= 1.0);
      CHECK(xy >= -1.0);
    }
  }
}

TEST_CASE("ssim rejects images smaller than the window") {
  CHECK_THROWS_AS(ssim_index(constant(8, 8, 0.5), constant(8, 8, 0.5), Channel::R), ArgumentError);
  SsimOptions o;
  o.window = 5;
  CHECK_NOTHROW(ssim_index(constant(8, 8, 0.5), constant(8, 8, 0.5), Channel::R, o));
}

TEST_CASE("ssim loss values") {
  std::mt19937_64 rng(1);
  const Tensor x = pvtest::random_tensor(rng, 3, 1, 12, 12);
  CHECK(ssim_loss(x, x, NormalizationMode::paper_sum) == doctest::Approx(-3.0).epsilon(1e-9));
  CHECK(ssim_loss(x, x, NormalizationMode::mean) == doctest::Approx(-1.0).epsilon(1e-9));
  const Tensor xb = pvtest::random_tensor(rng, 3, 4, 12, 12), yb = pvtest::random_tensor(rng, 3, 4, 12, 12);
  CHECK(ssim_loss(xb, xb, NormalizationMode::paper_sum) == doctest::Approx(-12.0).epsilon(1e-9));
  CHECK(ssim_loss(xb, yb, NormalizationMode::paper_sum) >= -12.0);
}

TEST_CASE("composite loss") {
  const LossWeights w;
  CHECK(w.mse == 0.2);
  CHECK(w.ssim == 0.4);
  CHECK(w.dsim == 0.4);
  CHECK(composite_loss(w, 1.0, -3.0, 2.0) == doctest::Approx(-0.2).epsilon(1e-15));
  CHECK(composite_loss({1, 0, 0}, 0.37, -2.0, 5.0) == 0.37);
  const double base = composite_loss(w, 0.3, -1.7, 4.1);
  CHECK(composite_loss(w, 0.6, -3.4, 8.2) == doctest::Approx(2 * base).epsilon(1e-15));
  CHECK_THROWS_AS(composite_loss({0.5, 0.5, 0.5}, 1, 1, 1), ArgumentError);
  CHECK_THROWS_AS(composite_loss({1.2, -0.2, 0.0}, 1, 1, 1), ArgumentError);
  CHECK_NOTHROW(composite_loss({0.2 + 5e-10, 0.4, 0.4}, 1, 1, 1));
}

TEST_CASE("dsim basics") {
  const ModelBundle bundle = pvtest::small_encoder_bundle(4);
  const Encoder enc(bundle);
  std::mt19937_64 rng(2);
  const Tensor x = pvtest::random_tensor(rng, 3, 3, 8, 8), y = pvtest::random_tensor(rng, 3, 3, 8, 8);
  const LatentBatch z = encode_batch(enc, x);
  CHECK(dsim_loss(enc, x, z, NormalizationMode::paper_sum) == 0.0);
  CHECK(dsim_loss(enc, y, z, NormalizationMode::paper_sum) > 0.0);
  const double sum = dsim_loss(enc, y, z, NormalizationMode::paper_sum);
  CHECK(dsim_loss(enc, y, z, NormalizationMode::mean) == doctest::Approx(sum / z.values.size()).epsilon(1e-14));

  const ModelBundle other = pvtest::small_encoder_bundle(5);
  const Encoder other_enc(other);
  CHECK_THROWS_AS(dsim_loss(other_enc, y, z, NormalizationMode::mean), ProvenanceError);
}

TEST_CASE("dsim gradient step leaves the encoder untouched") {
  const ModelBundle bundle = pvtest::small_encoder_bundle(4);
  const Encoder enc(bundle);
  const std::string before = bundle.current_digest();
  Decoder dec = build_decoder(pvtest::small_decoder_config(), 1);
  nn::Adam adam(dec.network(), 1e-2);
  std::mt19937_64 rng(2);
  const Tensor x = pvtest::random_tensor(rng, 3, 2, 8, 8);
  const LatentBatch z = encode_batch(enc, x);
  nn::Tape tape;
  const Tensor y = dec.network().forward(z.values, nn::Mode::train, &tape);
  Tensor g;
  dsim_loss(enc, y, z, NormalizationMode::mean, &g);
  nn::Gradients grads = dec.network().zero_gradients();
  dec.network().backward(tape, g, &grads, false);
  adam.step(dec.network(), grads);
  CHECK(bundle.current_digest() == before);
  CHECK(enc.current_digest() == enc.digest());
}

TEST_CASE("analytic gradients match central differences") {
  for (const auto& r : pvtest::decoder_gradient_check(100, 1e-4, 5)) {
    INFO(r.component << " max relative error " << r.max_rel_error);
    CHECK(r.checked == 100);
    CHECK(r.max_rel_error < 1e-3);
  }
}

TEST_CASE("ssim gradient with respect to the image") {
  std::mt19937_64 rng(8);
  const Image x = pvtest::random_image(rng, 13, 12, 1), y = pvtest::random_image(rng, 13, 12, 1);
  SsimOptions o;
  o.window = 7;
  std::vector<double> g(y.data.size());
  ssim_plane(x.data, y.data, 13, 12, o, g);
  Buffer yp = y.data;
  for (std::size_t i = 0; i < yp.size(); i += 7) {
    const double saved = yp[i];
    yp[i] = saved + 1e-5;
    const double up = ssim_plane(x.data, yp, 13, 12, o);
    yp[i] = saved - 1e-5;
    const double down = ssim_plane(x.data, yp, 13, 12, o);
    yp[i] = saved;
    CHECK(pvtest::relative_error(g[i], (up - down) / 2e-5) < 1e-6);
  }
}

TEST_CASE("desk encoder: mean-image baseline has larger dsim than the images themselves") {
  const AppConfig cfg = pvtest::fixture_config();
  const ModelBundle bundle = load_model(cfg);
  const Encoder enc(bundle);
  const DatasetManifest m = load_dataset(cfg);
  auto samples = m.split("eval");
  samples.resize(64);
  const ImageSet set = load_image_set(m, samples, 32, 32, "eval64");
  const LatentBatch z = encode_batch(enc, set.images);
  const Tensor mean = mean_image_batch(set.images, set.size());
  const double self = dsim_loss(enc, set.images, z, NormalizationMode::mean);
  const double baseline = dsim_loss(enc, mean, z, NormalizationMode::mean);
  CHECK(self == 0.0);
  CHECK(baseline > self);
}

TEST_CASE("loss report json") {
  LossReport r{0.1, -0.5, 2.0, composite_loss({}, 0.1, -0.5, 2.0), NormalizationMode::mean, 16};
  const auto j = r.to_json(7);
  CHECK(j.at("step") == 7);
  CHECK(j.at("mode") == "mean");
  for (const char* key : {"mse", "ssim_loss", "dsim", "composite"}) CHECK(j.contains(key));
  const LossReport back = LossReport::from_json(j);
  CHECK(back.composite == r.composite);
  CHECK(parse_normalization_mode("relative") == NormalizationMode::relative);
}
