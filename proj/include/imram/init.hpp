// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cmath>
#include <cstddef>

#include "imram/rng.hpp"
#include "imram/tensor.hpp"

namespace imram {

/// Uniform Xavier/Glorot initialization in +-sqrt(6 / (fan_in + fan_out)).
inline Tensor xavier_uniform(std::size_t rows, std::size_t cols, Rng& rng) {
  const double limit = std::sqrt(6.0 / static_cast<double>(rows + cols));
  Tensor t(rows, cols);
  for (double& x : t.data()) x = rng.uniform(-limit, limit);
  return t;
}

inline Tensor uniform_tensor(std::size_t rows, std::size_t cols, double lo, double hi, Rng& rng) {
  Tensor t(rows, cols);
  for (double& x : t.data()) x = rng.uniform(lo, hi);
  return t;
}

}  // namespace imram
