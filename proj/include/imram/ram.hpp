// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <string>
#include <string_view>

#include "imram/rng.hpp"
#include "imram/tape.hpp"
#include "imram/tensor.hpp"

namespace imram {

/// Aggregation policy used by the memory distillation unit.
enum class Aggregator { Add, Mlp, Att, Gate, Ours };

Aggregator aggregator_from_string(std::string_view name);
std::string_view to_string(Aggregator a);

/// Learnable state of one recurrent-attention-memory block. Weight shapes
/// depend on the aggregation policy; transforms apply to row vectors, so a
/// gate acting on the concatenated [x, c] pair is stored as 2d x d.
struct RamParams {
  Aggregator aggregator = Aggregator::Ours;
  double lambda = 9.0;  // inverse softmax temperature, > 0

  Tensor gate_weight;  // ours/gate: 2d x d; att: 2d x 1
  Tensor gate_bias;    // ours/gate: 1 x d;  att: 1 x 1
  Tensor out_weight;   // ours: 2d x d; mlp: d x d
  Tensor out_bias;     // ours/mlp: 1 x d

  static RamParams init(std::size_t dim, Aggregator aggregator, double lambda, Rng& rng);
};

/// Cross-modal attention output for one query set against one response set.
struct AttentionResult {
  Tensor context;          // m' x d, convex combinations of response rows
  Tensor weights;          // m' x n', rows sum to 1
  Tensor raw_sims;         // m' x n' cosine similarities
  Tensor normalized_sims;  // m' x n' relu + per-response-column L2
};

struct RamStep {
  AttentionResult attention;
  Tensor updated;  // X*, the distilled query set
};

/// Pairwise cosine similarities between row sets; zero rows fall back to the
/// norm guard and produce zero similarity.
Tensor pairwise_cosine(Tape& tape, const Tensor& x, const Tensor& y);

/// relu followed by L2 normalization across queries for each response column;
/// columns with no positive entry come back all zero.
Tensor normalize_sims(Tape& tape, const Tensor& sims);

/// Temperature softmax over responses per query row, then the weighted
/// context sum. raw_sims is left empty here; ram_step fills it.
AttentionResult attend(Tape& tape, const Tensor& normalized_sims, const Tensor& y, double lambda);

/// Fuses each query row with its attended context according to the policy.
Tensor distill(Tape& tape, const Tensor& x, const Tensor& context, const RamParams& params);

/// The full attention unit: cosine -> normalize -> attend.
AttentionResult attend_only(Tape& tape, const Tensor& x, const Tensor& y, const RamParams& params);

/// One recurrent step: attention followed by distillation, returning both the
/// alignment contexts and the updated query set.
RamStep ram_step(Tape& tape, const Tensor& x, const Tensor& y, const RamParams& params);

}  // namespace imram
