#pragma once

#include <cmath>
#include <cstdint>

namespace rmfn {

// xoshiro256++ seeded through splitmix64. Self-contained so that streams are
// reproducible across platforms and standard library versions; experiment
// artifacts must be byte-identical for a given seed.
class Rng {
 public:
  explicit Rng(uint64_t seed) {
    uint64_t x = seed;
    for (auto& word : s_) word = splitmix64(x);
  }

  // Derives an independent stream, e.g. per image: Rng(seed).fork(i, tag).
  Rng fork(uint64_t a, uint64_t b = 0) const {
    uint64_t x = s_[0] ^ (0x9e3779b97f4a7c15ULL * (a + 1));
    x ^= s_[2] ^ (0xbf58476d1ce4e5b9ULL * (b + 1));
    return Rng(x);
  }

  uint64_t next_u64() {
    const uint64_t result = rotl(s_[0] + s_[3], 23) + s_[0];
    const uint64_t t = s_[1] << 17;
    s_[2] ^= s_[0];
    s_[3] ^= s_[1];
    s_[1] ^= s_[2];
    s_[0] ^= s_[3];
    s_[2] ^= t;
    s_[3] = rotl(s_[3], 45);
    return result;
  }

  // Uniform in [0, 1), 53-bit resolution.
  double uniform() { return static_cast<double>(next_u64() >> 11) * 0x1.0p-53; }

  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

  // Uniform integer in [lo, hi] inclusive.
  int64_t uniform_int(int64_t lo, int64_t hi) {
    const uint64_t span = static_cast<uint64_t>(hi - lo) + 1;
    return lo + static_cast<int64_t>(bounded(span));
  }

  // Standard normal via Box-Muller; the spare is cached.
  double normal() {
    if (has_spare_) {
      has_spare_ = false;
      return spare_;
    }
    double u1 = uniform();
    while (u1 <= 0.0) u1 = uniform();
    const double u2 = uniform();
    const double r = std::sqrt(-2.0 * std::log(u1));
    const double a = 6.283185307179586476925286766559 * u2;
    spare_ = r * std::sin(a);
    has_spare_ = true;
    return r * std::cos(a);
  }

 private:
  static uint64_t splitmix64(uint64_t& x) {
    uint64_t z = (x += 0x9e3779b97f4a7c15ULL);
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
    return z ^ (z >> 31);
  }

  static uint64_t rotl(uint64_t x, int k) { return (x << k) | (x >> (64 - k)); }

  // Debiased multiply-based bounded draw (rejection only in the short tail).
  uint64_t bounded(uint64_t span) {
    if (span == 0) return next_u64();
    while (true) {
      const uint64_t r = next_u64();
      const uint64_t lo64 = r % span;
      if (r - lo64 <= ~uint64_t{0} - (span - 1)) return lo64;
    }
  }

  uint64_t s_[4];
  double spare_ = 0.0;
  bool has_spare_ = false;
};

}  // namespace rmfn
