#pragma once

#include <cmath>
#include <cstdint>
#include <string_view>

namespace snnet {

// Deterministic random number generator used everywhere in the project.
//
// Algorithm: xoshiro256++ (Blackman & Vigna), seeded through splitmix64.
// All derived quantities are built from the raw 64-bit stream with fixed,
// platform-independent arithmetic:
//   - uniform01:   (next() >> 11) * 2^-53, in [0, 1)
//   - normal:      Box-Muller on two fresh uniforms (no caching)
//   - uniform_int: bitmask rejection sampling (unbiased)
// Identical seeds therefore produce identical streams on every platform.
class Rng {
 public:
  explicit Rng(uint64_t seed) : seed_(seed) {
    uint64_t x = seed;
    for (auto& si : s_) si = splitmix64(x);
  }

  uint64_t next() {
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

  // Uniform double in [0, 1), 53 bits of randomness.
  double uniform01() { return static_cast<double>(next() >> 11) * 0x1.0p-53; }

  // Standard normal via Box-Muller. Consumes exactly two raw draws.
  double normal() {
    // u1 in (0, 1] so the log is finite.
    const double u1 = (static_cast<double>(next() >> 11) + 1.0) * 0x1.0p-53;
    const double u2 = static_cast<double>(next() >> 11) * 0x1.0p-53;
    return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * M_PI * u2);
  }

  // Uniform integer in [0, n). Bitmask rejection keeps it unbiased.
  uint64_t uniform_int(uint64_t n) {
    if (n <= 1) return 0;
    uint64_t mask = ~uint64_t{0} >> __builtin_clzll((n - 1) | 1);
    uint64_t v;
    do {
      v = next() & mask;
    } while (v >= n);
    return v;
  }

  // Derive an independent child generator for a named substream.
  Rng fork(std::string_view tag) const {
    uint64_t h = 0xcbf29ce484222325ull;  // FNV-1a over the tag
    for (char c : tag) {
      h ^= static_cast<unsigned char>(c);
      h *= 0x100000001b3ull;
    }
    uint64_t x = seed_ ^ h;
    return Rng(splitmix64(x));
  }

  uint64_t seed() const { return seed_; }

 private:
  explicit Rng() = default;

  static uint64_t rotl(uint64_t x, int k) { return (x << k) | (x >> (64 - k)); }

  static uint64_t splitmix64(uint64_t& x) {
    uint64_t z = (x += 0x9e3779b97f4a7c15ull);
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ull;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebull;
    return z ^ (z >> 31);
  }

  uint64_t s_[4] = {};
  uint64_t seed_ = 0;
};

}  // namespace snnet
