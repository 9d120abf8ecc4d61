#pragma once

#include <cmath>
#include <cstdint>
#include <random>
#include <string_view>

namespace tdsr {

/// Derives an independent stream seed from the run seed and a stage tag.
/// Every random consumer in the pipeline obtains its seed this way.
std::uint64_t derive_seed(std::uint64_t seed, std::string_view tag);

/// Portable random source. std::mt19937_64 is fully specified by the standard;
/// the distributions below are written out so results do not depend on the
/// standard library implementation.
class Rng {
 public:
  explicit Rng(std::uint64_t seed) : engine_(seed) {}

  std::uint64_t next_u64() { return engine_(); }

  /// Uniform in [0,1).
  double uniform() { return static_cast<double>(engine_() >> 11) * 0x1.0p-53; }
  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

  /// Uniform integer in [lo, hi].
  int uniform_int(int lo, int hi) {
    const auto span = static_cast<std::uint64_t>(hi - lo) + 1;
    return lo + static_cast<int>(engine_() % span);
  }

  /// Standard normal via Box-Muller.
  double normal() {
    double u1 = uniform();
    while (u1 <= 0.0) u1 = uniform();
    const double u2 = uniform();
    return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * M_PI * u2);
  }

 private:
  std::mt19937_64 engine_;
};

}  // namespace tdsr
