#pragma once

#include "dsf/tensor.hpp"

#include <chrono>
#include <filesystem>
#include <random>
#include <string>

namespace testing {

inline dsf::RasterD random_raster(std::mt19937_64& rng, int h, int w, double lo = 0.0, double hi = 1.0) {
  std::uniform_real_distribution<double> u(lo, hi);
  dsf::RasterD r(h, w);
  for (Eigen::Index i = 0; i < r.size(); ++i) r.data()[i] = u(rng);
  return r;
}

/// Fresh, empty directory under the system temp dir.
inline std::filesystem::path temp_dir(const std::string& name) {
  const auto stamp = std::chrono::steady_clock::now().time_since_epoch().count();
  auto p = std::filesystem::temp_directory_path() / ("dsf_" + name + "_" + std::to_string(stamp));
  std::filesystem::remove_all(p);
  std::filesystem::create_directories(p);
  return p;
}

inline double rel_error(double a, double b) { return std::abs(a - b) / std::max({1e-8, std::abs(a), std::abs(b)}); }

}  // namespace testing
