// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <string_view>
#include <vector>

#include "imram/encoders.hpp"
#include "imram/ram.hpp"
#include "imram/tape.hpp"
#include "imram/tensor.hpp"

namespace imram {

/// Which grounded matching terms contribute to the step score: region-based,
/// word-based, or both.
enum class Variant { Image, Text, Full };

Variant variant_from_string(std::string_view name);
std::string_view to_string(Variant v);

struct MatchConfig {
  std::size_t steps = 3;  // K >= 1
  Variant variant = Variant::Full;
  double lambda = 9.0;
  Aggregator aggregator = Aggregator::Ours;
};

/// Per-step matching scores and their sum.
struct StepScores {
  std::vector<double> per_step;
  double total = 0.0;
};

/// Traced iterate output. Step scores and the total are 1x1 tape tensors;
/// the full attention result of each step is kept for analysis (empty on the
/// side a variant does not run).
struct IterateTrace {
  std::vector<Tensor> step_scores;
  Tensor total;
  std::vector<AttentionResult> image_attention;  // per step, contexts align with regions
  std::vector<AttentionResult> text_attention;   // per step, contexts align with words
};

/// Runs K matching steps. Each step applies the image-grounded block to the
/// evolving region queries against the original word set, and the
/// text-grounded block to the evolving word queries against the original
/// region set; only the query side is ever updated. Step scores always
/// compare contexts against the original fragment sets. Distillation is
/// skipped at the final step, where its output would be unused.
IterateTrace iterate_traced(Tape& tape, const Tensor& regions, const Tensor& words,
                            const RamParams& ram_image, const RamParams& ram_text,
                            const MatchConfig& cfg);

/// Value-level iterate over two fragment sets.
StepScores iterate(const FragmentSet& regions, const FragmentSet& words,
                   const RamParams& ram_image, const RamParams& ram_text,
                   const MatchConfig& cfg);

/// Mean-of-cosines step score; image_ctx/text_ctx may be empty when the
/// variant omits that side.
double step_score(const Tensor& regions, const Tensor& image_ctx, const Tensor& words,
                  const Tensor& text_ctx, Variant variant);

/// Arithmetic sum of the per-step scores.
double total_similarity(const StepScores& scores);

}  // namespace imram
