//
// Seedable 64-bit random generator with named stream splitting.
//
// All stochastic operations in the library draw from forked streams of a
// single root seed, so every result is reproducible bit-for-bit across runs.
// The generator is splitmix64; uniform and normal variates are derived here
// rather than through std::distributions, which are not pinned by the
// standard.
//

#pragma once

#include <cstdint>
#include <string_view>
#include <vector>

#include "locadit/core.hpp"

namespace locadit {

inline uint64_t splitmix64(uint64_t& state) {
  uint64_t z = (state += 0x9e3779b97f4a7c15ULL);
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
  return z ^ (z >> 31);
}

inline uint64_t hash_str(std::string_view s) {
  uint64_t h = 0xcbf29ce484222325ULL;  // FNV-1a
  for (char c : s) {
    h ^= static_cast<unsigned char>(c);
    h *= 0x100000001b3ULL;
  }
  return h;
}

class Rng {
 public:
  explicit Rng(uint64_t seed = 0) : state_(seed) {
    // burn the raw seed through the mixer so nearby seeds decorrelate
    splitmix64(state_);
  }

  uint64_t u64() { return splitmix64(state_); }

  /// Derived, statistically independent stream; the parent is not advanced.
  Rng fork(uint64_t stream) const {
    uint64_t s = state_ ^ (0x9e3779b97f4a7c15ULL + stream * 0xd1342543de82ef95ULL);
    return Rng(splitmix64(s));
  }
  Rng fork(std::string_view stream) const { return fork(hash_str(stream)); }

  /// Uniform double in [0, 1).
  double uniform() { return static_cast<double>(u64() >> 11) * 0x1.0p-53; }
  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

  /// Uniform integer in [0, n). n must be > 0.
  uint64_t index(uint64_t n) {
    return static_cast<uint64_t>((static_cast<__uint128_t>(u64()) * n) >> 64);
  }

  /// Standard normal via Box-Muller (two uniforms per variate).
  double normal() {
    double u1 = 1.0 - uniform();  // (0, 1]
    double u2 = uniform();
    return std::sqrt(-2.0 * std::log(u1)) * std::cos(6.283185307179586476925286766559 * u2);
  }
  double normal(double mu, double sigma) { return mu + sigma * normal(); }

  Vec3 normal3(double sigma = 1.0) { return {normal() * sigma, normal() * sigma, normal() * sigma}; }

  template <typename T>
  void shuffle(std::vector<T>& v) {
    for (size_t i = v.size(); i > 1; --i) {
      size_t j = static_cast<size_t>(index(i));
      std::swap(v[i - 1], v[j]);
    }
  }

  /// k distinct indices out of [0, n), in selection order.
  std::vector<size_t> sample_without_replacement(size_t n, size_t k) {
    std::vector<size_t> idx(n);
    for (size_t i = 0; i < n; ++i) idx[i] = i;
    if (k > n) k = n;
    for (size_t i = 0; i < k; ++i) {
      size_t j = i + static_cast<size_t>(index(n - i));
      std::swap(idx[i], idx[j]);
    }
    idx.resize(k);
    return idx;
  }

 private:
  uint64_t state_;
};

}  // namespace locadit
