// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cmath>
#include <cstdint>

namespace imram {

/// Deterministic 64-bit shift-based generator (splitmix64).
///
/// Pinned so that synthetic datasets and initializations are reproducible
/// across platforms and toolchains:
///   state += 0x9E3779B97F4A7C15
///   z = state; z ^= z >> 30; z *= 0xBF58476D1CE4B9FE
///   z ^= z >> 27; z *= 0x94D049BB133111EB; z ^= z >> 31
/// Doubles take the top 53 bits into [0, 1); bounded integers use the
/// 128-bit multiply-shift reduction; gaussians use one Box-Muller pair per
/// call (the sine half is discarded).
class Rng {
public:
  explicit Rng(std::uint64_t seed) : state_(seed) {}

  std::uint64_t next_u64() {
    state_ += 0x9E3779B97F4A7C15ULL;
    std::uint64_t z = state_;
    z = (z ^ (z >> 30)) * 0xBF58476D1CE4B9FEULL;
    z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
    return z ^ (z >> 31);
  }

  /// Uniform in [0, 1).
  double next_double() {
    return static_cast<double>(next_u64() >> 11) * 0x1.0p-53;
  }

  double uniform(double lo, double hi) { return lo + (hi - lo) * next_double(); }

  /// Uniform integer in [0, n); n must be > 0.
  std::uint64_t below(std::uint64_t n) {
    return static_cast<std::uint64_t>(
        (static_cast<unsigned __int128>(next_u64()) * n) >> 64);
  }

  /// Standard normal via Box-Muller.
  double gaussian() {
    const double u1 = 1.0 - next_double();  // (0, 1], keeps log finite
    const double u2 = next_double();
    return std::sqrt(-2.0 * std::log(u1)) * std::cos(6.283185307179586476925286766559 * u2);
  }

private:
  std::uint64_t state_;
};

}  // namespace imram
