#pragma once

#include <cstdint>
#include <random>
#include <string_view>

namespace hit {

// 64-bit FNV-1a, used to derive independent streams from (seed, name).
inline uint64_t fnv1a64(std::string_view s) {
  uint64_t h = 1469598103934665603ull;
  for (unsigned char c : s) {
    h ^= c;
    h *= 1099511628211ull;
  }
  return h;
}

inline uint64_t mix_seed(uint64_t seed, std::string_view tag) {
  uint64_t h = fnv1a64(tag);
  h ^= seed + 0x9e3779b97f4a7c15ull + (h << 6) + (h >> 2);
  return h;
}

/// Deterministic RNG. Only the raw mt19937_64 stream is used, never
/// std::*_distribution, so sequences are identical across standard
/// library implementations.
class Rng {
 public:
  explicit Rng(uint64_t seed) : eng_(seed) {}

  uint64_t next_u64() { return eng_(); }

  // [0, 1)
  double uniform() {
    return static_cast<double>(eng_() >> 11) * 0x1.0p-53;
  }

  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

  // inclusive bounds, rejection sampling keeps it exact and portable
  int uniform_int(int lo, int hi) {
    uint64_t n = static_cast<uint64_t>(hi - lo) + 1;
    uint64_t limit = UINT64_MAX - UINT64_MAX % n;
    uint64_t x;
    do {
      x = eng_();
    } while (x >= limit);
    return lo + static_cast<int>(x % n);
  }

  bool bernoulli(double p) { return uniform() < p; }

  // Irwin-Hall approximation: exact IEEE arithmetic only, so generated
  // data is bit-identical across platforms (Box-Muller would pull in
  // libm transcendentals).
  double gaussian() {
    double s = 0.0;
    for (int i = 0; i < 12; ++i) s += uniform();
    return s - 6.0;
  }

 private:
  std::mt19937_64 eng_;
};

}  // namespace hit
