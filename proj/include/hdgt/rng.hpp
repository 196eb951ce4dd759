#pragma once

#include <cstdint>
#include <initializer_list>

namespace hdgt {

// splitmix64 finalizer; the single mixing primitive behind every random value
// in the project so results are bit-identical across platforms.
inline std::uint64_t mix64(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ull;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ull;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebull;
  return x ^ (x >> 31);
}

// Order-sensitive fold of several keys into one 64-bit hash.
inline std::uint64_t hash_keys(std::initializer_list<std::uint64_t> keys) {
  std::uint64_t h = 0x853c49e6748fea9bull;
  for (std::uint64_t k : keys) h = mix64(h ^ k);
  return h;
}

inline double unit_from_bits(std::uint64_t bits) {
  return static_cast<double>(bits >> 11) * 0x1.0p-53;  // [0,1)
}

// Counter-based uniform draw: stateless, safe to evaluate in any order.
inline double hash_unit(std::initializer_list<std::uint64_t> keys) {
  return unit_from_bits(hash_keys(keys));
}

// Sequential stream for places where a running state is more natural
// (parameter init, scene layout sampling).
class Rng {
 public:
  explicit Rng(std::uint64_t seed) : state_(seed) {}

  std::uint64_t next() {
    state_ += 0x9e3779b97f4a7c15ull;
    std::uint64_t x = state_;
    x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ull;
    x = (x ^ (x >> 27)) * 0x94d049bb133111ebull;
    return x ^ (x >> 31);
  }

  double unit() { return unit_from_bits(next()); }

  double uniform(double lo, double hi) { return lo + (hi - lo) * unit(); }

  // Uniform integer in [0, n). Modulo bias is immaterial at the sizes used here.
  std::uint64_t below(std::uint64_t n) { return n == 0 ? 0 : next() % n; }

 private:
  std::uint64_t state_;
};

}  // namespace hdgt
