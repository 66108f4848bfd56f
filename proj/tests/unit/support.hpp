#pragma once

#include <unistd.h>

#include <cstdlib>
#include <filesystem>
#include <random>
#include <string>

#include "pv/config.hpp"
#include "pv/data_ingest.hpp"
#include "pv/model_core.hpp"
#include "pv/tensor.hpp"

namespace pvtest {

inline pv::Image random_image(std::mt19937_64& rng, int h, int w, int c = 3, double lo = 0.0, double hi = 1.0) {
  std::uniform_real_distribution<double> u(lo, hi);
  pv::Image im(h, w, c);
  for (auto& v : im.data) v = u(rng);
  return im;
}

inline pv::Tensor random_tensor(std::mt19937_64& rng, int c, int n, int h, int w, double lo = 0.0, double hi = 1.0) {
  std::uniform_real_distribution<double> u(lo, hi);
  pv::Tensor t(c, n, h, w);
  for (auto& v : t.data) v = u(rng);
  return t;
}

/// Directory of the desk fixture generated by the ctest setup step.
inline std::filesystem::path fixture_dir() {
  const char* env = std::getenv("PV_FIXTURE_DIR");
  return env ? std::filesystem::path(env) : std::filesystem::path("desk_fixture");
}

inline pv::AppConfig fixture_config() { return pv::AppConfig::load(fixture_dir() / "config.json"); }

/// A fresh scratch directory under the system temp dir.
inline std::filesystem::path scratch_dir(const std::string& name) {
  const auto p = std::filesystem::temp_directory_path() / ("pv_test_" + name + "_" + std::to_string(::getpid()));
  std::filesystem::remove_all(p);
  std::filesystem::create_directories(p);
  return p;
}

}  // namespace pvtest
