// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <filesystem>
#include <span>
#include <string>
#include <unordered_map>
#include <vector>

#include "imram/model.hpp"
#include "imram/tape.hpp"

namespace imram {

/// Hard-negative triplet objective settings. Hard negatives require at least
/// one non-matching item, so batches must hold >= 2 pairs.
struct TripletLossConfig {
  double margin = 0.2;
  std::size_t batch_size = 16;
};

enum class OptimizerKind { Adam, Sgd };

OptimizerKind optimizer_from_string(std::string_view name);
std::string_view to_string(OptimizerKind k);

struct OptimizerConfig {
  OptimizerKind kind = OptimizerKind::Adam;
  double lr = 2e-4;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  double clip_norm = 2.0;  // global gradient norm; <= 0 disables clipping
};

/// Adam (or plain SGD) with global gradient-norm clipping. Moment
/// accumulators mirror parameter shapes and are keyed by parameter name.
class Optimizer {
public:
  explicit Optimizer(OptimizerConfig config) : config_(config) {}

  void step(ModelParams& model, const GradientMap& grads);

  const OptimizerConfig& config() const { return config_; }
  std::int64_t steps_taken() const { return steps_; }

private:
  OptimizerConfig config_;
  std::int64_t steps_ = 0;
  std::unordered_map<std::string, std::pair<Tensor, Tensor>> moments_;
};

/// One training example: raw region features plus the tokenized caption.
struct TrainItem {
  Tensor raw_regions;
  std::vector<int> token_ids;
};

/// Pairwise score matrix for a batch of already-encoded fragment sets; entry
/// (a, b) holds the total similarity of image a against text b, so the
/// diagonal carries the matched pairs.
Tensor batch_similarity_traced(Tape& tape, std::span<const Tensor> image_sets,
                               std::span<const Tensor> text_sets, const ModelParams& model);

/// Value-level batch similarity over encoded fragment sets.
Tensor batch_similarity(std::span<const FragmentSet> images, std::span<const FragmentSet> texts,
                        const ModelParams& model);

/// Bidirectional hard-negative hinge loss of a square similarity matrix.
double hard_triplet_loss(const Tensor& sims, double margin);

/// Forward + backward over one batch, gradient clipping, optimizer update.
/// Returns the batch loss. A non-finite loss aborts with NumericError before
/// any parameter is touched.
double train_step(ModelParams& model, Optimizer& opt, std::span<const TrainItem> batch,
                  const TripletLossConfig& cfg);

/// Checkpoint file: magic "IMRM", format version u32, then one record per
/// named parameter: name length u32, UTF-8 name, rows u32, cols u32,
/// row-major 64-bit little-endian values. Model-shape metadata (step count,
/// variant, aggregator, lambda) rides along as 1x1 records under "meta.".
void save_checkpoint(const std::filesystem::path& path, const ModelParams& model);
ModelParams load_checkpoint(const std::filesystem::path& path);

}  // namespace imram
