#pragma once

#include <cstdint>
#include <string_view>

namespace kdts {

// One splitmix64 step: advances the state and returns the next value.
inline std::uint64_t splitmix64(std::uint64_t& state) {
  std::uint64_t z = (state += 0x9E3779B97F4A7C15ULL);
  z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
  z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
  return z ^ (z >> 31);
}

inline std::uint64_t fnv1a64(std::string_view s) {
  std::uint64_t h = 0xCBF29CE484222325ULL;
  for (unsigned char c : s) {
    h ^= c;
    h *= 0x100000001B3ULL;
  }
  return h;
}

// Counter-based random stream. A stream is fully determined by its key
// (seed, epoch, index), so the draws a sample sees never depend on batch
// composition, shuffling, or how many other streams were consumed first.
// Parallel application across samples reproduces serial results exactly.
//
// The generator behind the key is xoshiro256++. All derived draws
// (next_unit, next_int, next_gaussian) are implemented here rather than via
// <random> distributions, whose output is implementation-defined.
class RngStream {
 public:
  RngStream(std::uint64_t seed, std::uint64_t epoch, std::uint64_t index) {
    std::uint64_t z = seed;
    z ^= splitmix64(epoch) + 0x9E3779B97F4A7C15ULL;
    std::uint64_t zz = z;
    (void)splitmix64(zz);
    z = zz ^ (splitmix64(index) + 0xC2B2AE3D27D4EB4FULL);
    for (auto& word : s_) word = splitmix64(z);
  }

  // Namespaced stream for internal machinery (weight init, shuffling, data
  // synthesis). The tag keeps unrelated consumers off each other's draws.
  static RngStream derive(std::uint64_t seed, std::string_view tag,
                          std::uint64_t a = 0, std::uint64_t b = 0) {
    return RngStream(seed ^ fnv1a64(tag), a, b);
  }

  std::uint64_t next_u64() {
    const std::uint64_t result = rotl(s_[0] + s_[3], 23) + s_[0];
    const std::uint64_t t = s_[1] << 17;
    s_[2] ^= s_[0];
    s_[3] ^= s_[1];
    s_[1] ^= s_[2];
    s_[0] ^= s_[3];
    s_[2] ^= t;
    s_[3] = rotl(s_[3], 45);
    return result;
  }

  // Uniform in [0, 1), 53-bit resolution.
  double next_unit() { return static_cast<double>(next_u64() >> 11) * 0x1.0p-53; }

  // Uniform integer in [lo, hi], bounds inclusive. Requires lo <= hi.
  std::int64_t next_int(std::int64_t lo, std::int64_t hi) {
    const std::uint64_t span = static_cast<std::uint64_t>(hi - lo) + 1;
    if (span == 0) return static_cast<std::int64_t>(next_u64());  // full range
    const auto wide = static_cast<unsigned __int128>(next_u64()) * span;
    return lo + static_cast<std::int64_t>(static_cast<std::uint64_t>(wide >> 64));
  }

  // Standard normal via Box-Muller; the spare value is cached.
  double next_gaussian();

 private:
  static std::uint64_t rotl(std::uint64_t x, int k) {
    return (x << k) | (x >> (64 - k));
  }

  std::uint64_t s_[4]{};
  bool has_spare_ = false;
  double spare_ = 0.0;
};

}  // namespace kdts
