// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <span>
#include <string>
#include <vector>

#include "imram/rng.hpp"
#include "imram/tape.hpp"
#include "imram/tensor.hpp"

namespace imram {

/// An ordered set of d-dimensional fragment vectors for one item: image
/// regions or text words, one per row, L2-normalized (zero rows are allowed
/// under the norm guard).
struct FragmentSet {
  std::string item_id;
  Tensor vectors;  // m x d

  std::size_t count() const { return vectors.rows(); }
  std::size_t dim() const { return vectors.cols(); }
};

/// Linear projection of raw region features into the shared embedding space.
struct ImageProjection {
  Tensor weight;  // raw_dim x d (applied to row vectors)
  Tensor bias;    // 1 x d

  static ImageProjection init(std::size_t raw_dim, std::size_t dim, Rng& rng);
};

/// One GRU direction: update / reset / candidate transforms.
struct GruParams {
  Tensor w_update, u_update, b_update;
  Tensor w_reset, u_reset, b_reset;
  Tensor w_cand, u_cand, b_cand;

  static GruParams init(std::size_t input_dim, std::size_t hidden_dim, Rng& rng);
  std::size_t hidden_dim() const { return u_update.rows(); }
  std::size_t input_dim() const { return w_update.rows(); }
};

/// Word embedding table plus independent forward and backward GRUs. Hidden
/// size equals the shared fragment dimension d.
struct TextEncoder {
  Tensor embedding;  // vocab x embed_dim
  GruParams forward_gru;
  GruParams backward_gru;

  static TextEncoder init(std::size_t vocab_size, std::size_t embed_dim, std::size_t hidden_dim,
                          Rng& rng);
  std::size_t vocab_size() const { return embedding.rows(); }
  std::size_t hidden_dim() const { return forward_gru.hidden_dim(); }
};

/// One GRU step on row vectors:
///   z = sigmoid(x W_z + h U_z + b_z)
///   r = sigmoid(x W_r + h U_r + b_r)
///   c = tanh(x W_c + (r . h) U_c + b_c)
///   h' = (1 - z) . h + z . c
Tensor gru_cell(Tape& tape, const Tensor& x, const Tensor& h_prev, const GruParams& params);

/// Projects raw region features (one region per row) and L2-normalizes each
/// projected row.
FragmentSet project_image(Tape& tape, const Tensor& raw, const ImageProjection& proj,
                          std::string item_id = {});

/// Embeds tokens, runs the forward GRU left-to-right and the backward GRU
/// right-to-left (both from zero initial state), averages the two hidden
/// states per position, and L2-normalizes each row.
FragmentSet encode_text(Tape& tape, std::span<const int> token_ids, const TextEncoder& enc,
                        std::string item_id = {});

}  // namespace imram
