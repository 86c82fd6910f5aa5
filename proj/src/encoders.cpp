// SPDX-License-Identifier: Apache-2.0
#include "imram/encoders.hpp"

#include <stdexcept>

#include "imram/init.hpp"

namespace imram {

ImageProjection ImageProjection::init(std::size_t raw_dim, std::size_t dim, Rng& rng) {
  return ImageProjection{xavier_uniform(raw_dim, dim, rng), Tensor(1, dim)};
}

GruParams GruParams::init(std::size_t input_dim, std::size_t hidden_dim, Rng& rng) {
  GruParams p;
  p.w_update = xavier_uniform(input_dim, hidden_dim, rng);
  p.u_update = xavier_uniform(hidden_dim, hidden_dim, rng);
  p.b_update = Tensor(1, hidden_dim);
  p.w_reset = xavier_uniform(input_dim, hidden_dim, rng);
  p.u_reset = xavier_uniform(hidden_dim, hidden_dim, rng);
  p.b_reset = Tensor(1, hidden_dim);
  p.w_cand = xavier_uniform(input_dim, hidden_dim, rng);
  p.u_cand = xavier_uniform(hidden_dim, hidden_dim, rng);
  p.b_cand = Tensor(1, hidden_dim);
  return p;
}

TextEncoder TextEncoder::init(std::size_t vocab_size, std::size_t embed_dim,
                              std::size_t hidden_dim, Rng& rng) {
  TextEncoder enc;
  enc.embedding = uniform_tensor(vocab_size, embed_dim, -0.1, 0.1, rng);
  enc.forward_gru = GruParams::init(embed_dim, hidden_dim, rng);
  enc.backward_gru = GruParams::init(embed_dim, hidden_dim, rng);
  return enc;
}

Tensor gru_cell(Tape& tape, const Tensor& x, const Tensor& h_prev, const GruParams& params) {
  if (x.rows() != 1 || h_prev.rows() != 1) {
    throw std::invalid_argument("gru_cell: expects row vectors, got " + x.shape_str() + " and " +
                                h_prev.shape_str());
  }
  if (x.cols() != params.input_dim() || h_prev.cols() != params.hidden_dim()) {
    throw std::invalid_argument("gru_cell: dimension mismatch (input " + x.shape_str() +
                                ", state " + h_prev.shape_str() + ")");
  }
  const Tensor z = tape.sigmoid(tape.add(
      tape.add(tape.matmul(x, params.w_update), tape.matmul(h_prev, params.u_update)),
      params.b_update));
  const Tensor r = tape.sigmoid(tape.add(
      tape.add(tape.matmul(x, params.w_reset), tape.matmul(h_prev, params.u_reset)),
      params.b_reset));
  const Tensor cand = tape.tanh(tape.add(
      tape.add(tape.matmul(x, params.w_cand), tape.matmul(tape.mul(r, h_prev), params.u_cand)),
      params.b_cand));
  const Tensor keep = tape.sub(Tensor::ones(1, params.hidden_dim()), z);
  return tape.add(tape.mul(keep, h_prev), tape.mul(z, cand));
}

FragmentSet project_image(Tape& tape, const Tensor& raw, const ImageProjection& proj,
                          std::string item_id) {
  if (raw.rows() == 0) throw std::invalid_argument("project_image: empty region set");
  if (raw.cols() != proj.weight.rows()) {
    throw std::invalid_argument("project_image: raw feature dimension " + raw.shape_str() +
                                " does not match projection " + proj.weight.shape_str());
  }
  const Tensor projected = tape.add_row_vector(tape.matmul(raw, proj.weight), proj.bias);
  return FragmentSet{std::move(item_id), tape.l2_normalize_rows(projected, kNormEps)};
}

FragmentSet encode_text(Tape& tape, std::span<const int> token_ids, const TextEncoder& enc,
                        std::string item_id) {
  if (token_ids.empty()) throw std::invalid_argument("encode_text: empty token sequence");
  const std::size_t vocab = enc.vocab_size();
  for (int id : token_ids) {
    if (id < 0 || static_cast<std::size_t>(id) >= vocab) {
      throw std::invalid_argument("encode_text: token id " + std::to_string(id) +
                                  " outside vocabulary of size " + std::to_string(vocab));
    }
  }
  const std::size_t n = token_ids.size();
  const std::size_t hidden = enc.hidden_dim();
  const Tensor embedded = tape.select_rows(enc.embedding, token_ids);

  std::vector<Tensor> inputs(n);
  for (std::size_t j = 0; j < n; ++j) {
    const std::vector<int> one = {static_cast<int>(j)};
    inputs[j] = tape.select_rows(embedded, one);
  }

  std::vector<Tensor> forward_states(n);
  Tensor h = Tensor(1, hidden);
  for (std::size_t j = 0; j < n; ++j) {
    h = gru_cell(tape, inputs[j], h, enc.forward_gru);
    forward_states[j] = h;
  }

  std::vector<Tensor> backward_states(n);
  h = Tensor(1, hidden);
  for (std::size_t j = n; j-- > 0;) {
    h = gru_cell(tape, inputs[j], h, enc.backward_gru);
    backward_states[j] = h;
  }

  std::vector<Tensor> words(n);
  for (std::size_t j = 0; j < n; ++j) {
    words[j] = tape.scale(tape.add(forward_states[j], backward_states[j]), 0.5);
  }
  const Tensor stacked = tape.stack_rows(words);
  return FragmentSet{std::move(item_id), tape.l2_normalize_rows(stacked, kNormEps)};
}

}  // namespace imram
