// SPDX-License-Identifier: Apache-2.0
#include "imram/tape.hpp"

#include <atomic>
#include <cmath>
#include <stdexcept>

namespace imram {

namespace {

std::uint64_t next_tape_id() {
  static std::atomic<std::uint64_t> counter{1};
  return counter.fetch_add(1);
}

[[noreturn]] void shape_error(const char* op, const Tensor& a, const Tensor& b) {
  throw std::invalid_argument(std::string(op) + ": dimension mismatch (" + a.shape_str() +
                              " vs " + b.shape_str() + ")");
}

void require_nonempty(const char* op, const Tensor& a) {
  if (a.empty()) throw std::invalid_argument(std::string(op) + ": empty tensor");
}

}  // namespace

const Tensor& GradientMap::at(const Tensor& leaf) const {
  const Tensor* g = find(leaf);
  if (g == nullptr) {
    throw std::logic_error("GradientMap: tensor is not a watched leaf of this tape");
  }
  return *g;
}

const Tensor* GradientMap::find(const Tensor& leaf) const {
  if (leaf.node() < 0) return nullptr;
  auto it = grads_.find(leaf.node());
  return it == grads_.end() ? nullptr : &it->second;
}

Tape::Tape() : id_(next_tape_id()) {}

bool Tape::tracked(const Tensor& t) const {
  return t.requires_grad_ && t.tape_id_ == id_ && t.node_ >= 0 &&
         static_cast<std::size_t>(t.node_) < nodes_.size();
}

int Tape::watch(Tensor& t) {
  if (tracked(t)) return t.node_;
  const int id = static_cast<int>(nodes_.size());
  nodes_.push_back(TapeNode{Op::Leaf, {}, t, 0.0, {}});
  t.requires_grad_ = true;
  t.node_ = id;
  t.tape_id_ = id_;
  backward_taken_ = false;
  return id;
}

int Tape::input_id(const Tensor& t) {
  if (tracked(t)) return t.node_;
  const int id = static_cast<int>(nodes_.size());
  nodes_.push_back(TapeNode{Op::Constant, {}, t, 0.0, {}});
  return id;
}

Tensor Tape::finish(Tensor value, Op op, std::initializer_list<const Tensor*> ins,
                    double scalar, std::vector<int> indices) {
  bool any_tracked = false;
  for (const Tensor* t : ins) any_tracked = any_tracked || tracked(*t);
  if (!any_tracked) return value;

  std::vector<int> ids;
  ids.reserve(ins.size());
  for (const Tensor* t : ins) ids.push_back(input_id(*t));
  const int id = static_cast<int>(nodes_.size());
  nodes_.push_back(TapeNode{op, std::move(ids), value, scalar, std::move(indices)});
  value.requires_grad_ = true;
  value.node_ = id;
  value.tape_id_ = id_;
  backward_taken_ = false;
  return value;
}

Tensor Tape::matmul(const Tensor& a, const Tensor& b) {
  if (a.cols() != b.rows()) shape_error("matmul", a, b);
  Tensor out(a.rows(), b.cols());
  detail::matmul_into(a, b, out);
  return finish(std::move(out), Op::MatMul, {&a, &b});
}

Tensor Tape::transpose(const Tensor& a) {
  Tensor out(a.cols(), a.rows());
  for (std::size_t i = 0; i < a.rows(); ++i)
    for (std::size_t j = 0; j < a.cols(); ++j) out.at(j, i) = a.at(i, j);
  return finish(std::move(out), Op::Transpose, {&a});
}

Tensor Tape::add(const Tensor& a, const Tensor& b) {
  if (!a.same_shape(b)) shape_error("add", a, b);
  Tensor out = a;
  for (std::size_t i = 0; i < out.size(); ++i) out.data()[i] += b.data()[i];
  return finish(std::move(out), Op::Add, {&a, &b});
}

Tensor Tape::sub(const Tensor& a, const Tensor& b) {
  if (!a.same_shape(b)) shape_error("sub", a, b);
  Tensor out = a;
  for (std::size_t i = 0; i < out.size(); ++i) out.data()[i] -= b.data()[i];
  return finish(std::move(out), Op::Sub, {&a, &b});
}

Tensor Tape::mul(const Tensor& a, const Tensor& b) {
  if (!a.same_shape(b)) shape_error("mul", a, b);
  Tensor out = a;
  for (std::size_t i = 0; i < out.size(); ++i) out.data()[i] *= b.data()[i];
  return finish(std::move(out), Op::Mul, {&a, &b});
}

Tensor Tape::scale(const Tensor& a, double factor) {
  Tensor out = a;
  for (double& x : out.data()) x *= factor;
  return finish(std::move(out), Op::Scale, {&a}, factor);
}

Tensor Tape::add_row_vector(const Tensor& a, const Tensor& bias) {
  if (bias.rows() != 1 || bias.cols() != a.cols()) shape_error("add_row_vector", a, bias);
  Tensor out = a;
  for (std::size_t i = 0; i < a.rows(); ++i) {
    double* orow = out.row_ptr(i);
    const double* brow = bias.row_ptr(0);
    for (std::size_t j = 0; j < a.cols(); ++j) orow[j] += brow[j];
  }
  return finish(std::move(out), Op::AddRowVector, {&a, &bias});
}

Tensor Tape::elementwise(const Tensor& a, Activation kind) {
  Tensor out = a;
  Op op = Op::Relu;
  switch (kind) {
    case Activation::Relu:
      for (double& x : out.data()) x = x > 0.0 ? x : 0.0;
      op = Op::Relu;
      break;
    case Activation::Tanh:
      for (double& x : out.data()) x = std::tanh(x);
      op = Op::Tanh;
      break;
    case Activation::Sigmoid:
      for (double& x : out.data()) x = detail::stable_sigmoid(x);
      op = Op::Sigmoid;
      break;
  }
  return finish(std::move(out), op, {&a});
}

Tensor Tape::rowwise_softmax(const Tensor& a, double scale) {
  if (!(scale > 0.0)) {
    throw std::invalid_argument("rowwise_softmax: scale must be positive, got " +
                                std::to_string(scale));
  }
  require_nonempty("rowwise_softmax", a);
  Tensor out(a.rows(), a.cols());
  for (std::size_t i = 0; i < a.rows(); ++i) {
    const double* arow = a.row_ptr(i);
    double* orow = out.row_ptr(i);
    double max_logit = scale * arow[0];
    for (std::size_t j = 1; j < a.cols(); ++j) max_logit = std::max(max_logit, scale * arow[j]);
    double total = 0.0;
    for (std::size_t j = 0; j < a.cols(); ++j) {
      orow[j] = std::exp(scale * arow[j] - max_logit);
      total += orow[j];
    }
    for (std::size_t j = 0; j < a.cols(); ++j) orow[j] /= total;
  }
  return finish(std::move(out), Op::RowwiseSoftmax, {&a}, scale);
}

Tensor Tape::l2_normalize_rows(const Tensor& a, double eps) {
  if (!(eps > 0.0)) {
    throw std::invalid_argument("l2_normalize_rows: eps must be positive, got " +
                                std::to_string(eps));
  }
  Tensor out(a.rows(), a.cols());
  for (std::size_t i = 0; i < a.rows(); ++i) {
    const double* arow = a.row_ptr(i);
    double* orow = out.row_ptr(i);
    double sq = 0.0;
    for (std::size_t j = 0; j < a.cols(); ++j) sq += arow[j] * arow[j];
    const double denom = std::max(std::sqrt(sq), eps);
    for (std::size_t j = 0; j < a.cols(); ++j) orow[j] = arow[j] / denom;
  }
  return finish(std::move(out), Op::L2NormalizeRows, {&a}, eps);
}

Tensor Tape::concat_cols(const Tensor& a, const Tensor& b) {
  if (a.rows() != b.rows()) shape_error("concat_cols", a, b);
  Tensor out(a.rows(), a.cols() + b.cols());
  for (std::size_t i = 0; i < a.rows(); ++i) {
    double* orow = out.row_ptr(i);
    const double* arow = a.row_ptr(i);
    const double* brow = b.row_ptr(i);
    for (std::size_t j = 0; j < a.cols(); ++j) orow[j] = arow[j];
    for (std::size_t j = 0; j < b.cols(); ++j) orow[a.cols() + j] = brow[j];
  }
  return finish(std::move(out), Op::ConcatCols, {&a, &b});
}

Tensor Tape::stack_rows(std::span<const Tensor> parts) {
  if (parts.empty()) throw std::invalid_argument("stack_rows: no inputs");
  std::size_t total_rows = 0;
  for (const Tensor& p : parts) {
    if (p.cols() != parts[0].cols()) shape_error("stack_rows", parts[0], p);
    total_rows += p.rows();
  }
  Tensor out(total_rows, parts[0].cols());
  std::size_t r = 0;
  for (const Tensor& p : parts) {
    for (std::size_t i = 0; i < p.rows(); ++i, ++r)
      for (std::size_t j = 0; j < p.cols(); ++j) out.at(r, j) = p.at(i, j);
  }
  bool any_tracked = false;
  for (const Tensor& p : parts) any_tracked = any_tracked || tracked(p);
  if (!any_tracked) return out;
  std::vector<int> ids;
  ids.reserve(parts.size());
  for (const Tensor& p : parts) ids.push_back(input_id(p));
  const int id = static_cast<int>(nodes_.size());
  nodes_.push_back(TapeNode{Op::StackRows, std::move(ids), out, 0.0, {}});
  out.requires_grad_ = true;
  out.node_ = id;
  out.tape_id_ = id_;
  backward_taken_ = false;
  return out;
}

Tensor Tape::stack_cols(std::span<const Tensor> parts) {
  if (parts.empty()) throw std::invalid_argument("stack_cols: no inputs");
  std::size_t total_cols = 0;
  for (const Tensor& p : parts) {
    if (p.rows() != parts[0].rows()) shape_error("stack_cols", parts[0], p);
    total_cols += p.cols();
  }
  Tensor out(parts[0].rows(), total_cols);
  std::size_t c = 0;
  for (const Tensor& p : parts) {
    for (std::size_t i = 0; i < p.rows(); ++i)
      for (std::size_t j = 0; j < p.cols(); ++j) out.at(i, c + j) = p.at(i, j);
    c += p.cols();
  }
  bool any_tracked = false;
  for (const Tensor& p : parts) any_tracked = any_tracked || tracked(p);
  if (!any_tracked) return out;
  std::vector<int> ids;
  ids.reserve(parts.size());
  for (const Tensor& p : parts) ids.push_back(input_id(p));
  const int id = static_cast<int>(nodes_.size());
  nodes_.push_back(TapeNode{Op::StackCols, std::move(ids), out, 0.0, {}});
  out.requires_grad_ = true;
  out.node_ = id;
  out.tape_id_ = id_;
  backward_taken_ = false;
  return out;
}

Tensor Tape::sum_all(const Tensor& a) {
  require_nonempty("sum_all", a);
  double total = 0.0;
  for (double x : a.data()) total += x;
  Tensor out(1, 1);
  out.at(0, 0) = total;
  return finish(std::move(out), Op::SumAll, {&a});
}

Tensor Tape::select_rows(const Tensor& table, std::span<const int> ids) {
  if (ids.empty()) throw std::invalid_argument("select_rows: no row ids");
  for (int id : ids) {
    if (id < 0 || static_cast<std::size_t>(id) >= table.rows()) {
      throw std::invalid_argument("select_rows: row id " + std::to_string(id) +
                                  " out of range for table " + table.shape_str());
    }
  }
  Tensor out(ids.size(), table.cols());
  for (std::size_t i = 0; i < ids.size(); ++i) {
    const double* src = table.row_ptr(static_cast<std::size_t>(ids[i]));
    double* dst = out.row_ptr(i);
    for (std::size_t j = 0; j < table.cols(); ++j) dst[j] = src[j];
  }
  return finish(std::move(out), Op::SelectRows, {&table}, 0.0,
                std::vector<int>(ids.begin(), ids.end()));
}

Tensor Tape::hard_triplet_loss(const Tensor& sims, double margin) {
  if (sims.rows() != sims.cols()) {
    throw std::invalid_argument("hard_triplet_loss: similarity matrix must be square, got " +
                                sims.shape_str());
  }
  const std::size_t b = sims.rows();
  if (b < 2) {
    throw std::invalid_argument("hard_triplet_loss: batch must contain at least 2 pairs, got " +
                                std::to_string(b));
  }
  std::vector<int> args(2 * b, 0);
  double loss = 0.0;
  for (std::size_t q = 0; q < b; ++q) {
    // Hardest negative text for image q (row max) and hardest negative image
    // for text q (column max); first index wins ties.
    std::size_t row_arg = q == 0 ? 1 : 0;
    std::size_t col_arg = q == 0 ? 1 : 0;
    for (std::size_t c = 0; c < b; ++c) {
      if (c == q) continue;
      if (sims.at(q, c) > sims.at(q, row_arg)) row_arg = c;
      if (sims.at(c, q) > sims.at(col_arg, q)) col_arg = c;
    }
    args[q] = static_cast<int>(row_arg);
    args[b + q] = static_cast<int>(col_arg);
    const double row_hinge = margin - sims.at(q, q) + sims.at(q, row_arg);
    const double col_hinge = margin - sims.at(q, q) + sims.at(col_arg, q);
    if (row_hinge > 0.0) loss += row_hinge;
    if (col_hinge > 0.0) loss += col_hinge;
  }
  Tensor out(1, 1);
  out.at(0, 0) = loss;
  return finish(std::move(out), Op::HardTripletLoss, {&sims}, margin, std::move(args));
}

GradientMap Tape::backward(const Tensor& loss) {
  if (!tracked(loss)) throw std::logic_error("backward: loss is not tracked on this tape");
  if (loss.rows() != 1 || loss.cols() != 1) {
    throw std::logic_error("backward: loss node must be scalar (1x1), got " + loss.shape_str());
  }
  if (backward_taken_) {
    throw std::logic_error("backward: tape already consumed; run a new forward pass first");
  }
  backward_taken_ = true;

  std::vector<Tensor> grads(nodes_.size());
  std::vector<char> has_grad(nodes_.size(), 0);
  auto grad_of = [&](int i) -> Tensor& {
    if (!has_grad[i]) {
      grads[i] = Tensor(nodes_[i].value.rows(), nodes_[i].value.cols());
      has_grad[i] = 1;
    }
    return grads[i];
  };
  grad_of(loss.node()).at(0, 0) = 1.0;

  for (int i = loss.node(); i >= 0; --i) {
    if (!has_grad[i]) continue;
    const TapeNode& n = nodes_[i];
    const Tensor& g = grads[i];
    switch (n.op) {
      case Op::Leaf:
      case Op::Constant:
        break;
      case Op::MatMul: {
        const Tensor& a = nodes_[n.inputs[0]].value;
        const Tensor& b = nodes_[n.inputs[1]].value;
        detail::add_abt(g, b, grad_of(n.inputs[0]));
        detail::add_atb(a, g, grad_of(n.inputs[1]));
        break;
      }
      case Op::Transpose: {
        Tensor& ga = grad_of(n.inputs[0]);
        for (std::size_t r = 0; r < g.rows(); ++r)
          for (std::size_t c = 0; c < g.cols(); ++c) ga.at(c, r) += g.at(r, c);
        break;
      }
      case Op::Add: {
        Tensor& ga = grad_of(n.inputs[0]);
        Tensor& gb = grad_of(n.inputs[1]);
        for (std::size_t k = 0; k < g.size(); ++k) {
          ga.data()[k] += g.data()[k];
          gb.data()[k] += g.data()[k];
        }
        break;
      }
      case Op::Sub: {
        Tensor& ga = grad_of(n.inputs[0]);
        Tensor& gb = grad_of(n.inputs[1]);
        for (std::size_t k = 0; k < g.size(); ++k) {
          ga.data()[k] += g.data()[k];
          gb.data()[k] -= g.data()[k];
        }
        break;
      }
      case Op::Mul: {
        const Tensor& a = nodes_[n.inputs[0]].value;
        const Tensor& b = nodes_[n.inputs[1]].value;
        Tensor& ga = grad_of(n.inputs[0]);
        Tensor& gb = grad_of(n.inputs[1]);
        for (std::size_t k = 0; k < g.size(); ++k) {
          ga.data()[k] += g.data()[k] * b.data()[k];
          gb.data()[k] += g.data()[k] * a.data()[k];
        }
        break;
      }
      case Op::Scale: {
        Tensor& ga = grad_of(n.inputs[0]);
        for (std::size_t k = 0; k < g.size(); ++k) ga.data()[k] += n.scalar * g.data()[k];
        break;
      }
      case Op::AddRowVector: {
        Tensor& ga = grad_of(n.inputs[0]);
        Tensor& gbias = grad_of(n.inputs[1]);
        for (std::size_t r = 0; r < g.rows(); ++r) {
          const double* grow = g.row_ptr(r);
          double* garow = ga.row_ptr(r);
          double* gbrow = gbias.row_ptr(0);
          for (std::size_t c = 0; c < g.cols(); ++c) {
            garow[c] += grow[c];
            gbrow[c] += grow[c];
          }
        }
        break;
      }
      case Op::Relu: {
        const Tensor& a = nodes_[n.inputs[0]].value;
        Tensor& ga = grad_of(n.inputs[0]);
        for (std::size_t k = 0; k < g.size(); ++k) {
          if (a.data()[k] > 0.0) ga.data()[k] += g.data()[k];
        }
        break;
      }
      case Op::Tanh: {
        Tensor& ga = grad_of(n.inputs[0]);
        for (std::size_t k = 0; k < g.size(); ++k) {
          const double y = n.value.data()[k];
          ga.data()[k] += g.data()[k] * (1.0 - y * y);
        }
        break;
      }
      case Op::Sigmoid: {
        Tensor& ga = grad_of(n.inputs[0]);
        for (std::size_t k = 0; k < g.size(); ++k) {
          const double y = n.value.data()[k];
          ga.data()[k] += g.data()[k] * y * (1.0 - y);
        }
        break;
      }
      case Op::RowwiseSoftmax: {
        Tensor& ga = grad_of(n.inputs[0]);
        for (std::size_t r = 0; r < g.rows(); ++r) {
          const double* grow = g.row_ptr(r);
          const double* yrow = n.value.row_ptr(r);
          double* garow = ga.row_ptr(r);
          double dot = 0.0;
          for (std::size_t c = 0; c < g.cols(); ++c) dot += grow[c] * yrow[c];
          for (std::size_t c = 0; c < g.cols(); ++c)
            garow[c] += n.scalar * yrow[c] * (grow[c] - dot);
        }
        break;
      }
      case Op::L2NormalizeRows: {
        const Tensor& a = nodes_[n.inputs[0]].value;
        Tensor& ga = grad_of(n.inputs[0]);
        for (std::size_t r = 0; r < g.rows(); ++r) {
          const double* arow = a.row_ptr(r);
          const double* yrow = n.value.row_ptr(r);
          const double* grow = g.row_ptr(r);
          double* garow = ga.row_ptr(r);
          double sq = 0.0;
          for (std::size_t c = 0; c < g.cols(); ++c) sq += arow[c] * arow[c];
          const double norm = std::sqrt(sq);
          if (norm >= n.scalar) {
            double gy = 0.0;
            for (std::size_t c = 0; c < g.cols(); ++c) gy += grow[c] * yrow[c];
            for (std::size_t c = 0; c < g.cols(); ++c)
              garow[c] += (grow[c] - gy * yrow[c]) / norm;
          } else {
            for (std::size_t c = 0; c < g.cols(); ++c) garow[c] += grow[c] / n.scalar;
          }
        }
        break;
      }
      case Op::ConcatCols: {
        const std::size_t ca = nodes_[n.inputs[0]].value.cols();
        Tensor& ga = grad_of(n.inputs[0]);
        Tensor& gb = grad_of(n.inputs[1]);
        for (std::size_t r = 0; r < g.rows(); ++r) {
          const double* grow = g.row_ptr(r);
          double* garow = ga.row_ptr(r);
          double* gbrow = gb.row_ptr(r);
          for (std::size_t c = 0; c < ca; ++c) garow[c] += grow[c];
          for (std::size_t c = 0; c < g.cols() - ca; ++c) gbrow[c] += grow[ca + c];
        }
        break;
      }
      case Op::StackRows: {
        std::size_t r0 = 0;
        for (int in : n.inputs) {
          Tensor& gin = grad_of(in);
          for (std::size_t r = 0; r < gin.rows(); ++r)
            for (std::size_t c = 0; c < gin.cols(); ++c) gin.at(r, c) += g.at(r0 + r, c);
          r0 += gin.rows();
        }
        break;
      }
      case Op::StackCols: {
        std::size_t c0 = 0;
        for (int in : n.inputs) {
          Tensor& gin = grad_of(in);
          for (std::size_t r = 0; r < gin.rows(); ++r)
            for (std::size_t c = 0; c < gin.cols(); ++c) gin.at(r, c) += g.at(r, c0 + c);
          c0 += gin.cols();
        }
        break;
      }
      case Op::SumAll: {
        Tensor& ga = grad_of(n.inputs[0]);
        const double gv = g.at(0, 0);
        for (double& x : ga.data()) x += gv;
        break;
      }
      case Op::SelectRows: {
        Tensor& gt = grad_of(n.inputs[0]);
        for (std::size_t k = 0; k < n.indices.size(); ++k) {
          double* dst = gt.row_ptr(static_cast<std::size_t>(n.indices[k]));
          const double* src = g.row_ptr(k);
          for (std::size_t c = 0; c < g.cols(); ++c) dst[c] += src[c];
        }
        break;
      }
      case Op::HardTripletLoss: {
        const Tensor& s = nodes_[n.inputs[0]].value;
        Tensor& gs = grad_of(n.inputs[0]);
        const std::size_t b = s.rows();
        const double gv = g.at(0, 0);
        for (std::size_t q = 0; q < b; ++q) {
          const std::size_t rn = static_cast<std::size_t>(n.indices[q]);
          const std::size_t cn = static_cast<std::size_t>(n.indices[b + q]);
          if (n.scalar - s.at(q, q) + s.at(q, rn) > 0.0) {
            gs.at(q, rn) += gv;
            gs.at(q, q) -= gv;
          }
          if (n.scalar - s.at(q, q) + s.at(cn, q) > 0.0) {
            gs.at(cn, q) += gv;
            gs.at(q, q) -= gv;
          }
        }
        break;
      }
    }
  }

  GradientMap out;
  out.tape_id_ = id_;
  for (std::size_t i = 0; i < nodes_.size(); ++i) {
    if (nodes_[i].op != Op::Leaf) continue;
    const int id = static_cast<int>(i);
    if (has_grad[i]) {
      out.grads_.emplace(id, std::move(grads[i]));
    } else {
      out.grads_.emplace(id, Tensor(nodes_[i].value.rows(), nodes_[i].value.cols()));
    }
  }
  return out;
}

}  // namespace imram
