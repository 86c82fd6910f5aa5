// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <string>
#include <vector>

#include "imram/dataset.hpp"
#include "imram/model.hpp"

namespace imram {

/// Bidirectional retrieval quality. "Text retrieval" ranks captions for an
/// image query; "image retrieval" ranks images for a caption query.
struct RetrievalReport {
  double text_r1 = 0, text_r5 = 0, text_r10 = 0;
  double image_r1 = 0, image_r5 = 0, image_r10 = 0;

  double r_sum() const { return text_r1 + text_r5 + text_r10 + image_r1 + image_r5 + image_r10; }
};

/// Percentage of queries whose top-k gallery items (descending similarity,
/// ties broken toward the lower index) contain at least one gold index.
/// sim is queries x gallery; gold holds >= 1 gallery index per query.
double recall_at_k(const Tensor& sim, const std::vector<std::vector<std::size_t>>& gold,
                   std::size_t k);

/// Full image x text similarity matrix of a dataset under a frozen model.
Tensor similarity_matrix(const ModelParams& model, const Dataset& dataset);

/// R@{1,5,10} in both directions over the dataset's matched pairs. An image
/// with several gold captions counts as retrieved when any of them ranks
/// inside the cutoff.
RetrievalReport evaluate(const ModelParams& model, const Dataset& dataset);
RetrievalReport report_from_similarity(const Tensor& sims, const Dataset& dataset);

/// Word indices whose step-k word-grounded score exceeds the mean word score
/// for this pair (strictly). Requires a text-grounded variant and
/// 1 <= step_k <= K.
std::vector<std::size_t> salient_concepts(const ModelParams& model, const Tensor& raw_image,
                                          std::span<const int> token_ids, std::size_t step_k);

std::string format_report_table(const RetrievalReport& report);
std::string format_report_kv(const RetrievalReport& report);

}  // namespace imram
