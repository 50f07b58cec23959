#pragma once

#include <cmath>
#include <cstdint>

namespace corl {

// xorshift128+ with splitmix64 seeding. Self-contained so that streams are
// identical across platforms and trivially serializable (two words).
struct Rng {
  uint64_t s0 = 0, s1 = 0;

  Rng() : Rng(0) {}
  explicit Rng(uint64_t seed) {
    uint64_t z = seed;
    s0 = splitmix(z);
    s1 = splitmix(z);
    if (s0 == 0 && s1 == 0) s1 = 0x9e3779b97f4a7c15ull;
  }

  static uint64_t splitmix(uint64_t& x) {
    x += 0x9e3779b97f4a7c15ull;
    uint64_t z = x;
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ull;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebull;
    return z ^ (z >> 31);
  }

  uint64_t next_u64() {
    uint64_t x = s0;
    const uint64_t y = s1;
    s0 = y;
    x ^= x << 23;
    s1 = x ^ y ^ (x >> 17) ^ (y >> 26);
    return s1 + y;
  }

  // [0, 1)
  double uniform() { return double(next_u64() >> 11) * 0x1.0p-53; }

  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

  // [0, n)
  int uniform_int(int n) { return int(next_u64() % uint64_t(n)); }

  double normal() {
    // Box-Muller, one value per call; u clamped away from 0.
    double u = uniform();
    if (u <= 0.0) u = 0x1.0p-53;
    double v = uniform();
    return std::sqrt(-2.0 * std::log(u)) * std::cos(6.283185307179586476925287 * v);
  }
};

}  // namespace corl
