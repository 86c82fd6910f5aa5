// SPDX-License-Identifier: Apache-2.0
#include "imram/tensor.hpp"

#include <cmath>
#include <stdexcept>

namespace imram {

Tensor::Tensor(std::size_t rows, std::size_t cols, std::vector<double> data)
    : rows_(rows), cols_(cols), data_(std::move(data)) {
  if (data_.size() != rows_ * cols_) {
    throw std::invalid_argument("Tensor: data length " + std::to_string(data_.size()) +
                                " does not match shape " + shape_str());
  }
}

Tensor Tensor::full(std::size_t rows, std::size_t cols, double value) {
  Tensor t(rows, cols);
  for (double& x : t.data_) x = value;
  return t;
}

Tensor Tensor::row(std::initializer_list<double> values) {
  return Tensor(1, values.size(), std::vector<double>(values));
}

Tensor Tensor::from_rows(std::initializer_list<std::initializer_list<double>> rows) {
  const std::size_t r = rows.size();
  const std::size_t c = r == 0 ? 0 : rows.begin()->size();
  Tensor t(r, c);
  std::size_t i = 0;
  for (const auto& row : rows) {
    if (row.size() != c) throw std::invalid_argument("Tensor::from_rows: ragged rows");
    std::size_t j = 0;
    for (double v : row) t.at(i, j++) = v;
    ++i;
  }
  return t;
}

std::string Tensor::shape_str() const {
  return std::to_string(rows_) + "x" + std::to_string(cols_);
}

bool Tensor::all_finite() const {
  for (double x : data_) {
    if (!std::isfinite(x)) return false;
  }
  return true;
}

namespace detail {

void matmul_into(const Tensor& a, const Tensor& b, Tensor& out) {
  const std::size_t m = a.rows(), k = a.cols(), n = b.cols();
  for (double& x : out.data()) x = 0.0;
  for (std::size_t i = 0; i < m; ++i) {
    double* orow = out.row_ptr(i);
    const double* arow = a.row_ptr(i);
    for (std::size_t p = 0; p < k; ++p) {
      const double aip = arow[p];
      const double* brow = b.row_ptr(p);
      for (std::size_t j = 0; j < n; ++j) orow[j] += aip * brow[j];
    }
  }
}

void add_atb(const Tensor& a, const Tensor& g, Tensor& out) {
  const std::size_t m = a.rows(), k = a.cols(), n = g.cols();
  for (std::size_t i = 0; i < m; ++i) {
    const double* arow = a.row_ptr(i);
    const double* grow = g.row_ptr(i);
    for (std::size_t p = 0; p < k; ++p) {
      const double aip = arow[p];
      double* orow = out.row_ptr(p);
      for (std::size_t j = 0; j < n; ++j) orow[j] += aip * grow[j];
    }
  }
}

void add_abt(const Tensor& g, const Tensor& b, Tensor& out) {
  const std::size_t m = g.rows(), n = g.cols(), k = b.rows();
  for (std::size_t i = 0; i < m; ++i) {
    const double* grow = g.row_ptr(i);
    double* orow = out.row_ptr(i);
    for (std::size_t p = 0; p < k; ++p) {
      const double* brow = b.row_ptr(p);
      double acc = 0.0;
      for (std::size_t j = 0; j < n; ++j) acc += grow[j] * brow[j];
      orow[p] += acc;
    }
  }
}

double stable_sigmoid(double x) {
  if (x >= 0.0) return 1.0 / (1.0 + std::exp(-x));
  const double e = std::exp(x);
  return e / (1.0 + e);
}

}  // namespace detail

}  // namespace imram
