#pragma once

// Counter-based noise. Every draw is a pure function of (seed, stream, index),
// so any sample can be regenerated without replaying earlier ones and the
// output is bit-identical across standard library implementations.

#include <cmath>
#include <cstdint>
#include <initializer_list>
#include <numbers>

namespace shf::rng {

constexpr std::uint64_t splitmix64(std::uint64_t x) {
  x += 0x9E3779B97F4A7C15ULL;
  x = (x ^ (x >> 30)) * 0xBF58476D1CE4E5B9ULL;
  x = (x ^ (x >> 27)) * 0x94D049BB133111EBULL;
  return x ^ (x >> 31);
}

constexpr std::uint64_t mix(std::initializer_list<std::uint64_t> keys) {
  std::uint64_t h = 0x6A09E667F3BCC909ULL;
  for (auto k : keys) h = splitmix64(h ^ k);
  return h;
}

/// Uniform in (0, 1), never exactly 0.
inline double uniform(std::uint64_t key) {
  return (static_cast<double>(splitmix64(key) >> 11) + 0.5) * 0x1.0p-53;
}

/// Standard normal via Box-Muller over two independent uniforms.
inline double gaussian(std::uint64_t key) {
  double u1 = uniform(key ^ 0x5851F42D4C957F2DULL);
  double u2 = uniform(key ^ 0x14057B7EF767814FULL);
  return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * std::numbers::pi * u2);
}

/// Sequential generator over the same counter scheme, for test and fixture code.
class Stream {
 public:
  explicit Stream(std::uint64_t seed) : seed_(seed) {}
  double uniform() { return rng::uniform(mix({seed_, counter_++})); }
  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }
  double gaussian() { return rng::gaussian(mix({seed_, counter_++})); }
  std::uint64_t next_u64() { return splitmix64(mix({seed_, counter_++})); }

 private:
  std::uint64_t seed_;
  std::uint64_t counter_ = 0;
};

}  // namespace shf::rng
