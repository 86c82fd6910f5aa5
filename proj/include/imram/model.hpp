// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <functional>
#include <string_view>

#include "imram/encoders.hpp"
#include "imram/matcher.hpp"
#include "imram/ram.hpp"

namespace imram {

struct ModelConfig {
  std::size_t raw_dim = 0;     // incoming region feature width
  std::size_t vocab_size = 0;  // rows of the embedding table
  std::size_t embed_dim = 300;
  std::size_t dim = 32;  // shared fragment dimension d (= GRU hidden size)
  MatchConfig match;
};

/// Full learnable state: image projection, text encoder, and the two
/// independent RAM blocks (no weight sharing between them). A model instance
/// is a single-writer unit during training; a frozen instance may be shared
/// read-only.
struct ModelParams {
  ModelConfig config;
  ImageProjection image_proj;
  TextEncoder text;
  RamParams ram_image;
  RamParams ram_text;

  static ModelParams init(const ModelConfig& config, std::uint64_t seed);

  /// Visits every parameter tensor with its checkpoint name, in a fixed
  /// deterministic order.
  void for_each_param(const std::function<void(std::string_view, Tensor&)>& fn);
  void for_each_param(const std::function<void(std::string_view, const Tensor&)>& fn) const;

  /// Registers all parameters as leaves of a fresh training tape.
  void watch_all(Tape& tape);

  FragmentSet encode_image(Tape& tape, const Tensor& raw, std::string item_id = {}) const {
    return project_image(tape, raw, image_proj, std::move(item_id));
  }
  FragmentSet encode_tokens(Tape& tape, std::span<const int> ids, std::string item_id = {}) const {
    return encode_text(tape, ids, text, std::move(item_id));
  }

  /// Scores one (image, text) pair with a throwaway tape.
  StepScores score_pair(const Tensor& raw, std::span<const int> ids) const;
};

}  // namespace imram
