// SPDX-License-Identifier: Apache-2.0
//
// Shared test helpers: relative error, random tensors, and the central
// finite-difference gradient checker used as the independent oracle for
// every tape gradient rule. Nothing here calls into the tape's backward
// path; FD differences go through forward evaluation only.
#pragma once

#include <cmath>
#include <functional>
#include <vector>

#include "imram/rng.hpp"
#include "imram/tape.hpp"
#include "imram/tensor.hpp"

namespace testsupport {

inline double rel_err(double a, double b) {
  return std::fabs(a - b) / std::max({std::fabs(a), std::fabs(b), 1e-8});
}

inline imram::Tensor random_tensor(imram::Rng& rng, std::size_t rows, std::size_t cols,
                                   double lo = -1.0, double hi = 1.0) {
  imram::Tensor t(rows, cols);
  for (double& x : t.data()) x = rng.uniform(lo, hi);
  return t;
}

/// Builds a scalar loss from leaf tensors through tape operations.
using LossBuilder =
    std::function<imram::Tensor(imram::Tape&, const std::vector<imram::Tensor>&)>;

/// Max relative error between tape gradients and central finite differences
/// over every entry of every leaf.
inline double max_tape_vs_fd(const LossBuilder& build, const std::vector<imram::Tensor>& leaves,
                             double h = 1e-5) {
  auto value_at = [&](const std::vector<imram::Tensor>& xs) {
    imram::Tape t;  // no watched leaves: pure forward evaluation
    return build(t, xs).at(0, 0);
  };

  imram::Tape tape;
  std::vector<imram::Tensor> watched = leaves;
  for (imram::Tensor& w : watched) tape.watch(w);
  const imram::Tensor loss = build(tape, watched);
  const imram::GradientMap grads = tape.backward(loss);

  double worst = 0.0;
  for (std::size_t t = 0; t < leaves.size(); ++t) {
    const imram::Tensor& g = grads.at(watched[t]);
    for (std::size_t i = 0; i < leaves[t].rows(); ++i) {
      for (std::size_t j = 0; j < leaves[t].cols(); ++j) {
        std::vector<imram::Tensor> xs = leaves;
        xs[t].at(i, j) = leaves[t].at(i, j) + h;
        const double fp = value_at(xs);
        xs[t].at(i, j) = leaves[t].at(i, j) - h;
        const double fm = value_at(xs);
        const double fd = (fp - fm) / (2.0 * h);
        worst = std::max(worst, rel_err(g.at(i, j), fd));
      }
    }
  }
  return worst;
}

}  // namespace testsupport
