// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstddef>
#include <cstdint>
#include <initializer_list>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

namespace imram {

/// Binary file failed magic/version/length validation.
class FormatError : public std::runtime_error {
public:
  using std::runtime_error::runtime_error;
};

/// Training produced a non-finite value.
class NumericError : public std::runtime_error {
public:
  using std::runtime_error::runtime_error;
};

/// Guard used wherever a vector norm appears in a denominator.
inline constexpr double kNormEps = 1e-8;

enum class Activation { Relu, Tanh, Sigmoid };

class Tape;

/// Dense row-major matrix of 64-bit reals.
///
/// A Tensor is a plain value. When it participates in a differentiable
/// computation it additionally carries a handle (tape id + node id) to the
/// Tape node that produced or registered it; copies share the handle.
/// Tensors must not be mutated between being recorded on a tape and the
/// tape's backward pass.
class Tensor {
public:
  Tensor() = default;
  Tensor(std::size_t rows, std::size_t cols)
      : rows_(rows), cols_(cols), data_(rows * cols, 0.0) {}
  Tensor(std::size_t rows, std::size_t cols, std::vector<double> data);

  static Tensor zeros(std::size_t rows, std::size_t cols) { return Tensor(rows, cols); }
  static Tensor full(std::size_t rows, std::size_t cols, double value);
  static Tensor ones(std::size_t rows, std::size_t cols) { return full(rows, cols, 1.0); }
  /// 1 x n row vector from a braced list.
  static Tensor row(std::initializer_list<double> values);
  /// Matrix from nested braced lists; all rows must have equal length.
  static Tensor from_rows(std::initializer_list<std::initializer_list<double>> rows);

  std::size_t rows() const { return rows_; }
  std::size_t cols() const { return cols_; }
  std::size_t size() const { return data_.size(); }
  bool empty() const { return data_.empty(); }

  double& at(std::size_t r, std::size_t c) { return data_[r * cols_ + c]; }
  double at(std::size_t r, std::size_t c) const { return data_[r * cols_ + c]; }
  double* row_ptr(std::size_t r) { return data_.data() + r * cols_; }
  const double* row_ptr(std::size_t r) const { return data_.data() + r * cols_; }
  std::span<double> data() { return data_; }
  std::span<const double> data() const { return data_; }

  bool same_shape(const Tensor& other) const {
    return rows_ == other.rows_ && cols_ == other.cols_;
  }
  /// "RxC" string, used in shape-mismatch messages.
  std::string shape_str() const;
  /// True when every entry is finite (no NaN/Inf).
  bool all_finite() const;

  /// True when this tensor is registered as a differentiable leaf or is the
  /// output of a recorded operation (on whichever tape it references).
  bool requires_grad() const { return requires_grad_; }
  /// Tape node handle, -1 when untracked.
  int node() const { return node_; }

private:
  friend class Tape;

  std::size_t rows_ = 0;
  std::size_t cols_ = 0;
  std::vector<double> data_;
  bool requires_grad_ = false;
  int node_ = -1;
  std::uint64_t tape_id_ = 0;
};

namespace detail {

/// out = a * b. out must be pre-shaped a.rows x b.cols; contents overwritten.
void matmul_into(const Tensor& a, const Tensor& b, Tensor& out);
/// out += a^T * g (shape a.cols x g.cols).
void add_atb(const Tensor& a, const Tensor& g, Tensor& out);
/// out += g * b^T (shape g.rows x b.rows).
void add_abt(const Tensor& g, const Tensor& b, Tensor& out);

double stable_sigmoid(double x);

}  // namespace detail

}  // namespace imram
