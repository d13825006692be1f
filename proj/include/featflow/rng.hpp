#pragma once

#include <cmath>
#include <cstdint>
#include <random>

namespace featflow {

// Deterministic random source. mt19937_64 is fully specified by the
// standard and the scaling below avoids std::uniform_real_distribution,
// whose output is implementation-defined; draws are therefore reproducible
// across compilers and runs.
class Rng {
 public:
  explicit Rng(uint64_t seed) : eng_(seed) {}

  // Uniform in [0, 1).
  double uniform() { return static_cast<double>(eng_() >> 11) * 0x1.0p-53; }

  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

  // Standard normal via Box-Muller.
  double normal() {
    if (has_spare_) {
      has_spare_ = false;
      return spare_;
    }
    double u1 = 0.0;
    while (u1 == 0.0) u1 = uniform();
    const double u2 = uniform();
    const double r = std::sqrt(-2.0 * std::log(u1));
    const double theta = 6.283185307179586476925286766559 * u2;
    spare_ = r * std::sin(theta);
    has_spare_ = true;
    return r * std::cos(theta);
  }

  double normal(double mean, double sigma) { return mean + sigma * normal(); }

  // Integer in [0, n), n >= 1. Modulo bias is irrelevant at the scales used.
  int index(int n) { return static_cast<int>(eng_() % static_cast<uint64_t>(n)); }

  uint64_t raw() { return eng_(); }

 private:
  std::mt19937_64 eng_;
  double spare_ = 0.0;
  bool has_spare_ = false;
};

}  // namespace featflow
