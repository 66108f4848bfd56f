#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <random>

#include "pv/config.hpp"
#include "pv/errors.hpp"
#include "pv/model_core.hpp"
#include "pv/saliency.hpp"
#include "support.hpp"

using namespace pv;
using nlohmann::json;

namespace {

// Feature map A = 3 * red - 1 from a 1x1 conv; scores are +-(4k) * mean(A),
// so score 0 = k * sum(A) with a gradient of k at every position.
ModelBundle oracle_network(int side, int stride, double k, bool logit_head = true) {
  ArchDescriptor d;
  d.name = "oracle";
  d.input_width = side;
  d.input_height = side;
  d.class_names = {"pos", "neg"};
  d.latent_layer_id = "feat";
  json layers = json::array({{{"id", "feat"}, {"type", "conv2d"}, {"filters", 1}, {"kernel", 1}, {"stride", stride}},
                             {{"id", "pool"}, {"type", "global_avg_pool"}}});
  if (logit_head) {
    layers.push_back({{"id", "logits"}, {"type", "dense"}, {"units", 2}});
    layers.push_back({{"id", "out"}, {"type", "sigmoid"}});
  } else {
    layers.push_back({{"id", "out"}, {"type", "dense"}, {"units", 2}, {"activation", "sigmoid"}});
  }
  d.layers = layers;
  nn::Network net = build_network(d);
  auto conv = net.layer(0).params();
  std::fill(conv.begin(), conv.end(), 0.0);
  conv[0] = 3.0;   // red channel weight
  conv[3] = -1.0;  // bias
  auto dense = net.layer(2).params();
  const double a = static_cast<double>(side / stride) * (side / stride);
  dense[0] = k * a;
  dense[1] = -k * a;
  dense[2] = dense[3] = 0.0;
  return ModelBundle(d, std::move(net));
}

Image red_image(const std::vector<double>& red, int side) {
  Image x(side, side, 3, 0.25);
  for (int i = 0; i < side * side; ++i) x.data[static_cast<std::size_t>(i) * 3] = red[i];
  return x;
}

// Separate bilinear reference: half-pixel centres, clamped at the border.
double bilinear_at(const Image& m, double sy, double sx) {
  sy = std::clamp(sy, 0.0, m.height - 1.0);
  sx = std::clamp(sx, 0.0, m.width - 1.0);
  const int y0 = static_cast<int>(std::floor(sy)), x0 = static_cast<int>(std::floor(sx));
  const int y1 = std::min(y0 + 1, m.height - 1), x1 = std::min(x0 + 1, m.width - 1);
  const double fy = sy - y0, fx = sx - x0;
  return (1 - fy) * ((1 - fx) * m.at(y0, x0) + fx * m.at(y0, x1)) + fy * ((1 - fx) * m.at(y1, x0) + fx * m.at(y1, x1));
}

Image map2(double a, double b, double c, double d) {
  Image m(2, 2, 1);
  m.data = {a, b, c, d};
  return m;
}

}  // namespace

TEST_CASE("grad-cam on the linear-head oracle") {
  // Red [[2/3, 0], [1, 1/3]] gives A = [[1, -1], [2, 0]].
  const ModelBundle bundle = oracle_network(2, 1, 1.0);
  const Image x = red_image({2.0 / 3.0, 0.0, 1.0, 1.0 / 3.0}, 2);
  const GradCamTrace trace = grad_cam_trace(bundle, x, 0);
  REQUIRE(trace.channel_weights.size() == 1);
  CHECK(trace.channel_weights[0] == doctest::Approx(1.0).epsilon(1e-12));
  const std::vector<double> raw = {1.0, 0.0, 2.0, 0.0};
  for (int i = 0; i < 4; ++i) CHECK(std::abs(trace.raw.data[i] - raw[i]) <= 1e-6);
  const SaliencyMap m = grad_cam(bundle, x, 0);
  CHECK(m.backend == "grad_cam");
  CHECK(m.target == "logit");
  CHECK(m.class_index == 0);
  const std::vector<double> want = {0.5, 0.0, 1.0, 0.0};
  for (int i = 0; i < 4; ++i) CHECK(std::abs(m.values.data[i] - want[i]) <= 1e-6);
}

TEST_CASE("negative weight on a nonnegative map gives an all-zero saliency map") {
  const ModelBundle bundle = oracle_network(2, 1, 1.0);
  const Image x = red_image({0.5, 0.9, 1.0, 0.4}, 2);  // A >= 0
  const SaliencyMap m = grad_cam(bundle, x, 1);
  for (double v : m.values.data) CHECK(v == 0.0);
}

TEST_CASE("posterior-only heads differentiate the posterior") {
  const ModelBundle bundle = oracle_network(2, 1, 1.0, false);
  CHECK(bundle.score_kind() == "posterior");
  const SaliencyMap m = grad_cam(bundle, red_image({2.0 / 3.0, 0.0, 1.0, 1.0 / 3.0}, 2), 0);
  CHECK(m.target == "posterior");
  const std::vector<double> want = {0.5, 0.0, 1.0, 0.0};
  for (int i = 0; i < 4; ++i) CHECK(std::abs(m.values.data[i] - want[i]) <= 1e-6);
}

TEST_CASE("scaling the class score by k leaves the normalized map unchanged") {
  std::mt19937_64 rng(4);
  const Image x = pvtest::random_image(rng, 8, 8);
  const SaliencyMap base = grad_cam(oracle_network(8, 2, 1.0), x, 0);
  for (double k : {1e-3, 0.5, 7.0, 1e3}) {
    const SaliencyMap scaled = grad_cam(oracle_network(8, 2, k), x, 0);
    for (std::size_t i = 0; i < base.values.size(); ++i) CHECK(std::abs(scaled.values.data[i] - base.values.data[i]) <= 1e-5);
  }
}

TEST_CASE("stride-2 oracle: closed form after bilinear upsampling") {
  std::mt19937_64 rng(6);
  for (int trial = 0; trial < 5; ++trial) {
    const Image x = pvtest::random_image(rng, 8, 8);
    // A samples 3 * red - 1 at even coordinates; the gradient is uniform.
    Image raw(4, 4, 1);
    for (int i = 0; i < 4; ++i)
      for (int j = 0; j < 4; ++j) raw.at(i, j) = std::max(0.0, 3.0 * x.at(2 * i, 2 * j, 0) - 1.0);
    // Upsample first, then divide by the upsampled peak.
    Image up(8, 8, 1);
    for (int i = 0; i < 8; ++i)
      for (int j = 0; j < 8; ++j) up.at(i, j) = bilinear_at(raw, (i + 0.5) / 2 - 0.5, (j + 0.5) / 2 - 0.5);
    const double peak = *std::max_element(up.data.begin(), up.data.end());
    const SaliencyMap m = grad_cam(oracle_network(8, 2, 1.0), x, 0);
    REQUIRE(m.values.height == 8);
    REQUIRE(m.values.width == 8);
    for (std::size_t i = 0; i < up.size(); ++i)
      CHECK(std::abs(m.values.data[i] - (peak > 0 ? up.data[i] / peak : 0.0)) <= 1e-6);
  }
}

TEST_CASE("grad-cam on the desk classifier") {
  const ModelBundle bundle = load_model(pvtest::fixture_config());
  std::mt19937_64 rng(8);
  const Image x = pvtest::random_image(rng, 32, 32);
  for (int c = 0; c < bundle.class_count(); ++c) {
    const SaliencyMap m = grad_cam(bundle, x, c);
    CHECK(m.values.height == 32);
    CHECK(m.values.width == 32);
    CHECK(m.values.channels == 1);
    CHECK(m.values.min() >= 0.0);
    CHECK(m.values.max() <= 1.0);
    CHECK(grad_cam(bundle, x, c).digest() == m.digest());
  }
  CHECK_THROWS_AS(grad_cam(bundle, x, -1), ArgumentError);
  CHECK_THROWS_AS(grad_cam(bundle, x, 10), ArgumentError);
  const GradCamBackend backend;
  CHECK(backend.compute(bundle, x, 2).digest() == grad_cam(bundle, x, 2).digest());
}

TEST_CASE("normalize_map") {
  const Image n = normalize_map(map2(0, 2, 4, 1));
  CHECK(n.data == Buffer{0, 0.5, 1, 0.25});
  CHECK(normalize_map(map2(0, 0, 0, 0)).data == Buffer{0, 0, 0, 0});
  const Image unit = map2(0.3, 1.0, 0.0, 0.7);
  CHECK(normalize_map(unit).data == unit.data);
  CHECK_THROWS_AS(normalize_map(map2(0, std::nan(""), 1, 0)), NumericError);
  CHECK_THROWS_AS(normalize_map(map2(0, -0.1, 1, 0)), ArgumentError);
}

TEST_CASE("upsample_map") {
  const Image c = upsample_map(map2(0.3, 0.3, 0.3, 0.3), 7, 5);
  for (double v : c.data) CHECK(v == doctest::Approx(0.3).epsilon(1e-15));
  Image one(1, 1, 1, 0.42);
  const Image spread = upsample_map(one, 6, 9);
  CHECK(spread.height == 6);
  CHECK(spread.width == 9);
  for (double v : spread.data) CHECK(v == 0.42);

  const Image ramp = upsample_map(map2(0, 1, 0, 1), 2, 4);
  const std::vector<double> row = {0.0, 0.25, 0.75, 1.0};
  for (int i = 0; i < 2; ++i)
    for (int j = 0; j < 4; ++j) {
      CHECK(ramp.at(i, j) == doctest::Approx(row[j]).epsilon(1e-15));
      CHECK(ramp.at(i, j) == doctest::Approx(bilinear_at(map2(0, 1, 0, 1), (i + 0.5) - 0.5, (j + 0.5) / 2 - 0.5)));
      if (j > 0) CHECK(ramp.at(i, j) >= ramp.at(i, j - 1));
    }

  std::mt19937_64 rng(2);
  const Image r = pvtest::random_image(rng, 3, 5, 1);
  const Image big = upsample_map(r, 11, 13);
  CHECK(big.min() >= r.min());
  CHECK(big.max() <= r.max());
  CHECK_THROWS(upsample_map(r, 2, 13));
}
