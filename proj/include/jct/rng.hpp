#pragma once

// Deterministic random source. mt19937_64 gives a standard-defined stream;
// the derived draws (uniform double, Box-Muller normal, Fisher-Yates) are
// implemented here rather than via std::*_distribution so that sequences are
// identical across standard-library implementations.

#include <cmath>
#include <cstdint>
#include <random>
#include <vector>

namespace jct {

class Rng {
 public:
  explicit Rng(std::uint64_t seed) : gen_(seed) {}

  std::uint64_t next_u64() { return gen_(); }

  // [0, 1)
  double uniform() { return static_cast<double>(gen_() >> 11) * 0x1.0p-53; }

  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

  // inclusive on both ends
  int uniform_int(int lo, int hi) {
    const std::uint64_t span = static_cast<std::uint64_t>(hi - lo) + 1;
    return lo + static_cast<int>(gen_() % span);
  }

  double normal() {
    if (has_spare_) {
      has_spare_ = false;
      return spare_;
    }
    double u1 = uniform();
    while (u1 <= 0.0) u1 = uniform();
    const double u2 = uniform();
    const double r = std::sqrt(-2.0 * std::log(u1));
    const double theta = 6.283185307179586477 * u2;
    spare_ = r * std::sin(theta);
    has_spare_ = true;
    return r * std::cos(theta);
  }

  template <typename It>
  void shuffle(It first, It last) {
    const auto n = last - first;
    for (auto i = n - 1; i > 0; --i) {
      const auto j = uniform_int(0, static_cast<int>(i));
      std::swap(first[i], first[j]);
    }
  }

 private:
  std::mt19937_64 gen_;
  bool has_spare_ = false;
  double spare_ = 0.0;
};

// Stable stream derivation for per-sample / per-epoch seeds (splitmix64 mix).
inline std::uint64_t mix_seed(std::uint64_t seed, std::uint64_t stream) {
  std::uint64_t z = seed + 0x9e3779b97f4a7c15ull * (stream + 1);
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ull;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebull;
  return z ^ (z >> 31);
}

// FNV-1a over values quantized to 1e-9; stable fingerprint for golden tests.
template <typename T>
std::uint64_t quantized_hash(const std::vector<T>& values) {
  std::uint64_t h = 1469598103934665603ull;
  for (T v : values) {
    const long long q = std::llround(static_cast<double>(v) * 1e9);
    const auto u = static_cast<std::uint64_t>(q);
    for (int b = 0; b < 8; ++b) {
      h ^= (u >> (8 * b)) & 0xffull;
      h *= 1099511628211ull;
    }
  }
  return h;
}

}  // namespace jct
