#pragma once

// Deterministic random numbers. The standard distributions are
// implementation-defined, so reproducible byte streams (generator output,
// simulator transcripts) use this fixed xoshiro256** generator with explicit
// sampling helpers instead.

#include <cmath>
#include <cstdint>

#include "octkit/bytes.hpp"

namespace oct {

struct SplitMix64 {
  std::uint64_t x;

  std::uint64_t next() {
    std::uint64_t z = (x += 0x9e3779b97f4a7c15ull);
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ull;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebull;
    return z ^ (z >> 31);
  }
};

// Mixes two seeds into one; used for per-partition derived streams.
inline std::uint64_t mix_seed(std::uint64_t seed, std::uint64_t salt) {
  SplitMix64 sm{seed ^ (0x9e3779b97f4a7c15ull * (salt + 1))};
  return sm.next();
}

class Rng {
 public:
  explicit Rng(std::uint64_t seed) {
    SplitMix64 sm{seed};
    for (auto& w : s_) w = sm.next();
  }

  std::uint64_t next() {
    const std::uint64_t result = rotl(s_[1] * 5, 7) * 9;
    const std::uint64_t t = s_[1] << 17;
    s_[2] ^= s_[0];
    s_[3] ^= s_[1];
    s_[1] ^= s_[2];
    s_[0] ^= s_[3];
    s_[2] ^= t;
    s_[3] = rotl(s_[3], 45);
    return result;
  }

  // Uniform integer in [0, n). Rejection sampling keeps it exactly uniform.
  std::uint64_t bounded(std::uint64_t n) {
    if (n <= 1) return 0;
    const std::uint64_t threshold = (0 - n) % n;
    for (;;) {
      std::uint64_t x = next();
      if (x >= threshold) return x % n;
    }
  }

  // Uniform double in [0, 1) with 53 bits of precision.
  double unit() { return static_cast<double>(next() >> 11) * 0x1.0p-53; }

  bool chance(double p) {
    if (p <= 0.0) return false;
    if (p >= 1.0) return true;
    return unit() < p;
  }

  // Uniform in [lo, hi] (closed on nanosecond granularity).
  Duration uniform(Duration lo, Duration hi) {
    if (hi <= lo) return lo;
    std::uint64_t span = static_cast<std::uint64_t>((hi - lo).count());
    return lo + Duration(static_cast<std::int64_t>(bounded(span + 1)));
  }

  std::uint32_t nonzero_u32() {
    for (;;) {
      auto v = static_cast<std::uint32_t>(next());
      if (v != 0) return v;
    }
  }

 private:
  static std::uint64_t rotl(std::uint64_t x, int k) {
    return (x << k) | (x >> (64 - k));
  }

  std::uint64_t s_[4];
};

}  // namespace oct
