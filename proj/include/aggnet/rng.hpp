#pragma once

#include <cmath>
#include <cstdint>
#include <random>
#include <string_view>

namespace aggnet {

namespace detail {

inline std::uint64_t fnv1a64(std::string_view s) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char c : s) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  return h;
}

inline std::uint64_t splitmix64(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

}  // namespace detail

// Seedable RNG used everywhere in the project.
//
// The generator is std::mt19937_64 (the 64-bit Mersenne Twister, whose output
// sequence is pinned by the C++ standard), and all real-valued draws go
// through explicit bit mappings below instead of std::*_distribution, whose
// algorithms are implementation-defined. Identical seeds therefore produce
// identical draw sequences on every platform and standard library.
class Rng {
 public:
  explicit Rng(std::uint64_t seed) : seed_(seed), gen_(seed) {}

  std::uint64_t seed() const { return seed_; }

  std::uint64_t next_u64() { return gen_(); }

  // Uniform in [0,1) with 53-bit resolution.
  double uniform() { return static_cast<double>(gen_() >> 11) * 0x1.0p-53; }

  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

  // Unbiased integer in [0,n) via rejection sampling.
  std::uint64_t uniform_below(std::uint64_t n) {
    if (n == 0) return 0;
    const std::uint64_t limit = (~std::uint64_t{0}) - (~std::uint64_t{0}) % n;
    std::uint64_t v = gen_();
    while (v >= limit) v = gen_();
    return v % n;
  }

  // Standard normal via Box-Muller; the paired value is cached.
  double normal() {
    if (has_spare_) {
      has_spare_ = false;
      return spare_;
    }
    const double u1 = 1.0 - uniform();  // (0,1], keeps log finite
    const double u2 = uniform();
    const double r = std::sqrt(-2.0 * std::log(u1));
    const double theta = 2.0 * 3.14159265358979323846 * u2;
    spare_ = r * std::sin(theta);
    has_spare_ = true;
    return r * std::cos(theta);
  }

  // Derives an independent child stream for a named purpose. The child seed
  // is splitmix64(parent_seed XOR fnv1a64(purpose)), so streams for distinct
  // purposes never depend on draw order.
  Rng split(std::string_view purpose) const {
    return Rng(detail::splitmix64(seed_ ^ detail::fnv1a64(purpose)));
  }

 private:
  std::uint64_t seed_;
  std::mt19937_64 gen_;
  bool has_spare_ = false;
  double spare_ = 0.0;
};

}  // namespace aggnet
