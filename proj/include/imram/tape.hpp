// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <span>
#include <unordered_map>
#include <vector>

#include "imram/tensor.hpp"

namespace imram {

/// Gradient rule tag for one recorded operation.
enum class Op {
  Leaf,
  Constant,
  MatMul,
  Transpose,
  Add,
  Sub,
  Mul,
  Scale,
  AddRowVector,
  Relu,
  Tanh,
  Sigmoid,
  RowwiseSoftmax,
  L2NormalizeRows,
  ConcatCols,
  StackRows,
  StackCols,
  SumAll,
  SelectRows,
  HardTripletLoss,
};

struct TapeNode {
  Op op;
  std::vector<int> inputs;
  Tensor value;              // forward output, referenced by dependents' gradient rules
  double scalar = 0.0;       // softmax scale / norm eps / loss margin / scale factor
  std::vector<int> indices;  // row ids for SelectRows, argmax negatives for HardTripletLoss
};

/// Leaf-node gradients produced by one backward pass.
class GradientMap {
public:
  const Tensor& at(const Tensor& leaf) const;
  const Tensor* find(const Tensor& leaf) const;

private:
  friend class Tape;
  std::uint64_t tape_id_ = 0;
  std::unordered_map<int, Tensor> grads_;
};

/// Reverse-mode differentiation record.
///
/// Nodes are appended in forward order, so inputs always precede their
/// consumers and the backward pass is a single reverse sweep. An operation is
/// recorded only when at least one input is tracked on this tape; otherwise
/// it evaluates eagerly and returns an untracked value, which is also the
/// inference path (a tape with no watched leaves never grows).
///
/// One tape and its tensors form a single-writer unit: forward and backward
/// on a given tape are single-threaded. Distinct tapes are independent.
class Tape {
public:
  Tape();
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  /// Registers a differentiable leaf. Idempotent per tape. The leaf's
  /// current value is captured; do not mutate it before backward().
  int watch(Tensor& t);

  Tensor matmul(const Tensor& a, const Tensor& b);
  Tensor transpose(const Tensor& a);
  Tensor add(const Tensor& a, const Tensor& b);
  Tensor sub(const Tensor& a, const Tensor& b);
  /// Elementwise (Hadamard) product.
  Tensor mul(const Tensor& a, const Tensor& b);
  Tensor scale(const Tensor& a, double factor);
  /// Adds a 1 x C bias row to every row of a.
  Tensor add_row_vector(const Tensor& a, const Tensor& bias);
  Tensor elementwise(const Tensor& a, Activation kind);
  Tensor relu(const Tensor& a) { return elementwise(a, Activation::Relu); }
  Tensor tanh(const Tensor& a) { return elementwise(a, Activation::Tanh); }
  Tensor sigmoid(const Tensor& a) { return elementwise(a, Activation::Sigmoid); }
  /// Row-wise softmax of (scale * a), computed with per-row max subtraction.
  /// scale must be > 0.
  Tensor rowwise_softmax(const Tensor& a, double scale);
  /// Divides each row by max(||row||_2, eps). eps must be > 0.
  Tensor l2_normalize_rows(const Tensor& a, double eps);
  Tensor concat_cols(const Tensor& a, const Tensor& b);
  Tensor stack_rows(std::span<const Tensor> parts);
  Tensor stack_cols(std::span<const Tensor> parts);
  Tensor sum_all(const Tensor& a);
  /// Gathers rows of table in the given order; duplicate ids accumulate
  /// gradient into the same row.
  Tensor select_rows(const Tensor& table, std::span<const int> ids);
  /// Bidirectional hard-negative hinge loss over a square similarity matrix
  /// (rows: image queries, cols: text queries; diagonal holds matched pairs).
  /// Ties in the max over negatives resolve to the lowest index; the hinge
  /// subgradient at zero is zero.
  Tensor hard_triplet_loss(const Tensor& sims, double margin);

  /// Reverse accumulation from a scalar (1x1) loss node. Every watched leaf
  /// receives a gradient of its own shape (zero when disconnected). Calling
  /// backward twice without recording new nodes is rejected.
  GradientMap backward(const Tensor& loss);

  std::size_t node_count() const { return nodes_.size(); }

private:
  bool tracked(const Tensor& t) const;
  /// Node id for an operation input, capturing untracked values as constants.
  int input_id(const Tensor& t);
  Tensor& attach(Tensor&& value, Op op, std::vector<int> inputs, double scalar,
                 std::vector<int> indices, Tensor& out);
  Tensor finish(Tensor value, Op op, std::initializer_list<const Tensor*> ins,
                double scalar = 0.0, std::vector<int> indices = {});

  std::vector<TapeNode> nodes_;
  std::uint64_t id_ = 0;
  bool backward_taken_ = false;
};

}  // namespace imram
