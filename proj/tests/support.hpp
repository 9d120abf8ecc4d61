#pragma once

#include <cmath>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <string>

#include "tdsr/core/feature_map.hpp"
#include "tdsr/core/image.hpp"
#include "tdsr/core/rng.hpp"

namespace tdsr::testing {

inline ImageTensor random_image(Rng& rng, int h, int w, int c, double lo = 0.0, double hi = 1.0) {
  ImageTensor img(h, w, c);
  for (auto& v : img.values()) v = rng.uniform(lo, hi);
  return img;
}

inline FeatureMap random_map(Rng& rng, int c, int h, int w, double lo = -1.0, double hi = 1.0) {
  FeatureMap fm(c, h, w);
  for (auto& v : fm.values()) v = rng.uniform(lo, hi);
  return fm;
}

inline double dot(std::span<const double> a, std::span<const double> b) {
  double s = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) s += a[i] * b[i];
  return s;
}

/// Central difference of f around x[i].
inline double central_difference(std::vector<double>& x, std::size_t i, double h, const std::function<double()>& f) {
  const double keep = x[i];
  x[i] = keep + h;
  const double fp = f();
  x[i] = keep - h;
  const double fm = f();
  x[i] = keep;
  return (fp - fm) / (2.0 * h);
}

/// Relative agreement used by every gradient check: |a - n| <= rtol * max(|a|, |n|) + atol.
inline bool grad_close(double analytic, double numeric, double rtol = 1e-3, double atol = 1e-7) {
  return std::abs(analytic - numeric) <= rtol * std::max(std::abs(analytic), std::abs(numeric)) + atol;
}

/// Fresh directory under the build tree's temp area.
inline std::filesystem::path temp_dir(const std::string& name) {
  auto dir = std::filesystem::temp_directory_path() / ("tdsr_test_" + name);
  std::filesystem::remove_all(dir);
  std::filesystem::create_directories(dir);
  return dir;
}

}  // namespace tdsr::testing
