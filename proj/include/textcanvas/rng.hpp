#pragma once

#include <cmath>
#include <cstdint>
#include <random>
#include <string_view>
#include <vector>

#include "textcanvas/types.hpp"

namespace textcanvas {

inline std::uint64_t splitmix64(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d4a2a27ec58493ULL;
  return x ^ (x >> 31);
}

/// Stable per-subsystem seed derivation: all randomness in a run flows from
/// one root seed split by tag.
inline std::uint64_t derive_seed(std::uint64_t root, std::string_view tag) {
  std::uint64_t h = 0xcbf29ce484222325ULL;  // FNV-1a
  for (char c : tag) {
    h ^= static_cast<unsigned char>(c);
    h *= 0x100000001b3ULL;
  }
  return splitmix64(root ^ h);
}

/// Deterministic RNG. Gaussian sampling is explicit Box-Muller so the
/// sequence is pinned by this code, not by the standard library.
class Rng {
 public:
  explicit Rng(std::uint64_t seed) : engine_(seed) {}

  /// Uniform in [0,1).
  double uniform() { return static_cast<double>(engine_() >> 11) * 0x1.0p-53; }

  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

  double normal() {
    const double u1 = 1.0 - uniform();  // (0,1]
    const double u2 = uniform();
    return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * M_PI * u2);
  }

  /// Uniform integer in [0, n). n must be > 0.
  std::uint64_t integer(std::uint64_t n) { return engine_() % n; }

  Matd gaussian(Index rows, Index cols, double stddev = 1.0) {
    Matd m(rows, cols);
    for (Index j = 0; j < cols; ++j)
      for (Index i = 0; i < rows; ++i) m(i, j) = stddev * normal();
    return m;
  }

  Matd uniform_mat(Index rows, Index cols, double lo, double hi) {
    Matd m(rows, cols);
    for (Index j = 0; j < cols; ++j)
      for (Index i = 0; i < rows; ++i) m(i, j) = uniform(lo, hi);
    return m;
  }

  template <typename T>
  void shuffle(std::vector<T>& v) {
    for (std::size_t i = v.size(); i > 1; --i)
      std::swap(v[i - 1], v[integer(i)]);
  }

 private:
  std::mt19937_64 engine_;
};

}  // namespace textcanvas
