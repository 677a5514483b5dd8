#pragma once

#include <cmath>
#include <cstdint>
#include <random>

namespace lightvit {

// Deterministic scalar RNG for weight initialization. mt19937_64 has a
// standard-specified sequence and the normal transform below is explicit,
// so one seed yields identical weights on every platform.
class Rng {
 public:
  explicit Rng(uint64_t seed) : gen_(seed) {}

  double uniform() {
    // 53-bit mantissa in [0, 1).
    return static_cast<double>(gen_() >> 11) * 0x1.0p-53;
  }

  double normal() {
    // Box-Muller; one fresh pair per call keeps the draw count predictable.
    double u1 = uniform();
    double u2 = uniform();
    while (u1 <= 0.0) u1 = uniform();
    return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * M_PI * u2);
  }

  // Rejection-sampled normal truncated to [-2, 2] standard deviations.
  double trunc_normal(double stddev) {
    double z = normal();
    while (z < -2.0 || z > 2.0) z = normal();
    return z * stddev;
  }

 private:
  std::mt19937_64 gen_;
};

}  // namespace lightvit
