// SPDX-License-Identifier: Apache-2.0
#include "imram/ram.hpp"

#include <stdexcept>

#include "imram/init.hpp"

namespace imram {

Aggregator aggregator_from_string(std::string_view name) {
  if (name == "add") return Aggregator::Add;
  if (name == "mlp") return Aggregator::Mlp;
  if (name == "att") return Aggregator::Att;
  if (name == "gate") return Aggregator::Gate;
  if (name == "ours") return Aggregator::Ours;
  throw std::invalid_argument("unknown aggregator policy: " + std::string(name));
}

std::string_view to_string(Aggregator a) {
  switch (a) {
    case Aggregator::Add: return "add";
    case Aggregator::Mlp: return "mlp";
    case Aggregator::Att: return "att";
    case Aggregator::Gate: return "gate";
    case Aggregator::Ours: return "ours";
  }
  return "?";
}

RamParams RamParams::init(std::size_t dim, Aggregator aggregator, double lambda, Rng& rng) {
  if (!(lambda > 0.0)) {
    throw std::invalid_argument("RamParams: lambda must be positive, got " +
                                std::to_string(lambda));
  }
  RamParams p;
  p.aggregator = aggregator;
  p.lambda = lambda;
  switch (aggregator) {
    case Aggregator::Add:
      break;
    case Aggregator::Mlp:
      p.out_weight = xavier_uniform(dim, dim, rng);
      p.out_bias = Tensor(1, dim);
      break;
    case Aggregator::Att:
      p.gate_weight = xavier_uniform(2 * dim, 1, rng);
      p.gate_bias = Tensor(1, 1);
      break;
    case Aggregator::Gate:
      p.gate_weight = xavier_uniform(2 * dim, dim, rng);
      p.gate_bias = Tensor(1, dim);
      break;
    case Aggregator::Ours:
      p.gate_weight = xavier_uniform(2 * dim, dim, rng);
      p.gate_bias = Tensor(1, dim);
      p.out_weight = xavier_uniform(2 * dim, dim, rng);
      p.out_bias = Tensor(1, dim);
      break;
  }
  return p;
}

Tensor pairwise_cosine(Tape& tape, const Tensor& x, const Tensor& y) {
  if (x.rows() == 0 || y.rows() == 0) {
    throw std::invalid_argument("pairwise_cosine: empty input set");
  }
  if (x.cols() != y.cols()) {
    throw std::invalid_argument("pairwise_cosine: dimension mismatch (" + x.shape_str() +
                                " vs " + y.shape_str() + ")");
  }
  const Tensor xn = tape.l2_normalize_rows(x, kNormEps);
  const Tensor yn = tape.l2_normalize_rows(y, kNormEps);
  return tape.matmul(xn, tape.transpose(yn));
}

Tensor normalize_sims(Tape& tape, const Tensor& sims) {
  const Tensor positive = tape.relu(sims);
  return tape.transpose(tape.l2_normalize_rows(tape.transpose(positive), kNormEps));
}

AttentionResult attend(Tape& tape, const Tensor& normalized_sims, const Tensor& y,
                       double lambda) {
  if (normalized_sims.cols() != y.rows()) {
    throw std::invalid_argument("attend: similarity columns " + normalized_sims.shape_str() +
                                " do not match response set " + y.shape_str());
  }
  AttentionResult result;
  result.normalized_sims = normalized_sims;
  result.weights = tape.rowwise_softmax(normalized_sims, lambda);
  result.context = tape.matmul(result.weights, y);
  return result;
}

Tensor distill(Tape& tape, const Tensor& x, const Tensor& context, const RamParams& params) {
  if (!x.same_shape(context)) {
    throw std::invalid_argument("distill: query and context shapes differ (" + x.shape_str() +
                                " vs " + context.shape_str() + ")");
  }
  const std::size_t m = x.rows();
  const std::size_t d = x.cols();
  switch (params.aggregator) {
    case Aggregator::Add:
      return tape.add(x, context);
    case Aggregator::Mlp:
      return tape.add(
          x, tape.tanh(tape.add_row_vector(tape.matmul(context, params.out_weight),
                                           params.out_bias)));
    case Aggregator::Att: {
      // Scalar blend per fragment, broadcast across the feature dimension.
      const Tensor cat = tape.concat_cols(x, context);
      const Tensor alpha = tape.sigmoid(
          tape.add_row_vector(tape.matmul(cat, params.gate_weight), params.gate_bias));
      const Tensor spread = tape.matmul(alpha, Tensor::ones(1, d));
      return tape.add(tape.mul(spread, x),
                      tape.mul(tape.sub(Tensor::ones(m, d), spread), context));
    }
    case Aggregator::Gate: {
      const Tensor cat = tape.concat_cols(x, context);
      const Tensor beta = tape.sigmoid(
          tape.add_row_vector(tape.matmul(cat, params.gate_weight), params.gate_bias));
      return tape.add(tape.mul(beta, x),
                      tape.mul(tape.sub(Tensor::ones(m, d), beta), context));
    }
    case Aggregator::Ours: {
      const Tensor cat = tape.concat_cols(x, context);
      const Tensor gate = tape.sigmoid(
          tape.add_row_vector(tape.matmul(cat, params.gate_weight), params.gate_bias));
      const Tensor fused = tape.tanh(
          tape.add_row_vector(tape.matmul(cat, params.out_weight), params.out_bias));
      return tape.add(tape.mul(gate, x),
                      tape.mul(tape.sub(Tensor::ones(m, d), gate), fused));
    }
  }
  throw std::invalid_argument("distill: unknown aggregator policy");
}

AttentionResult attend_only(Tape& tape, const Tensor& x, const Tensor& y,
                            const RamParams& params) {
  const Tensor sims = pairwise_cosine(tape, x, y);
  AttentionResult result = attend(tape, normalize_sims(tape, sims), y, params.lambda);
  result.raw_sims = sims;
  return result;
}

RamStep ram_step(Tape& tape, const Tensor& x, const Tensor& y, const RamParams& params) {
  RamStep step;
  step.attention = attend_only(tape, x, y, params);
  step.updated = distill(tape, x, step.attention.context, params);
  return step;
}

}  // namespace imram
