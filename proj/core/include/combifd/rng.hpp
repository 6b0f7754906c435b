#pragma once

#include <cmath>
#include <cstdint>

namespace combifd {

/// Small deterministic generator (splitmix64) so seeded runs are
/// byte-reproducible regardless of standard-library distribution details.
class Rng {
 public:
  explicit Rng(uint64_t seed = 0) : state_(seed + 0x9e3779b97f4a7c15ULL) {}

  uint64_t next_u64() {
    uint64_t z = (state_ += 0x9e3779b97f4a7c15ULL);
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
    return z ^ (z >> 31);
  }

  /// Uniform in [0, 1).
  double next_double() { return (next_u64() >> 11) * 0x1.0p-53; }

  double uniform(double a, double b) { return a + (b - a) * next_double(); }

  int uniform_int(int a, int b) {  // inclusive range [a, b]
    return a + static_cast<int>(next_u64() % static_cast<uint64_t>(b - a + 1));
  }

  double normal() {
    // Box-Muller; one value per call keeps the stream simple to reason about
    double u1 = next_double(), u2 = next_double();
    if (u1 <= 0.0) u1 = 0x1.0p-53;
    return std::sqrt(-2.0 * std::log(u1)) * std::cos(6.283185307179586 * u2);
  }

 private:
  uint64_t state_;
};

}  // namespace combifd
