#pragma once

#include <cmath>
#include <cstdint>

namespace radreg {

// Deterministic, platform-independent generator. std::normal_distribution is
// implementation-defined, so Gaussian draws are done by explicit Box-Muller.
class Rng {
public:
  explicit Rng(uint64_t seed) : state_(seed) {}

  uint64_t next_u64() {
    // splitmix64
    uint64_t z = (state_ += 0x9E3779B97F4A7C15ULL);
    z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
    z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
    return z ^ (z >> 31);
  }

  // uniform in [0, 1)
  double next_double() {
    return static_cast<double>(next_u64() >> 11) * 0x1.0p-53;
  }

  double next_gaussian() {
    if (have_spare_) {
      have_spare_ = false;
      return spare_;
    }
    double u1, u2;
    do {
      u1 = next_double();
    } while (u1 <= 0.0);
    u2 = next_double();
    const double r = std::sqrt(-2.0 * std::log(u1));
    const double a = 6.283185307179586476925286766559 * u2;
    spare_ = r * std::sin(a);
    have_spare_ = true;
    return r * std::cos(a);
  }

  // Derive an independent stream, e.g. a per-case seed from a master seed.
  static uint64_t derive(uint64_t seed, uint64_t index) {
    Rng r(seed ^ (0xA5A5A5A55A5A5A5AULL + index * 0x9E3779B97F4A7C15ULL));
    return r.next_u64();
  }

private:
  uint64_t state_;
  bool have_spare_ = false;
  double spare_ = 0.0;
};

}  // namespace radreg
