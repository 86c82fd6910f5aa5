// SPDX-License-Identifier: Apache-2.0
#include "imram/model.hpp"

#include <stdexcept>

namespace imram {

ModelParams ModelParams::init(const ModelConfig& config, std::uint64_t seed) {
  if (config.raw_dim == 0 || config.vocab_size == 0 || config.embed_dim == 0 || config.dim == 0) {
    throw std::invalid_argument("ModelParams: all dimensions must be positive");
  }
  if (config.match.steps < 1) {
    throw std::invalid_argument("ModelParams: match step count must be >= 1");
  }
  Rng rng(seed);
  ModelParams m;
  m.config = config;
  m.image_proj = ImageProjection::init(config.raw_dim, config.dim, rng);
  m.text = TextEncoder::init(config.vocab_size, config.embed_dim, config.dim, rng);
  m.ram_image = RamParams::init(config.dim, config.match.aggregator, config.match.lambda, rng);
  m.ram_text = RamParams::init(config.dim, config.match.aggregator, config.match.lambda, rng);
  return m;
}

namespace {

template <typename Model, typename Fn>
void visit_params(Model& m, const Fn& fn) {
  fn("image_proj.weight", m.image_proj.weight);
  fn("image_proj.bias", m.image_proj.bias);
  fn("text.embedding", m.text.embedding);

  auto gru = [&](std::string_view prefix, auto& p) {
    const std::string base(prefix);
    fn(base + ".w_update", p.w_update);
    fn(base + ".u_update", p.u_update);
    fn(base + ".b_update", p.b_update);
    fn(base + ".w_reset", p.w_reset);
    fn(base + ".u_reset", p.u_reset);
    fn(base + ".b_reset", p.b_reset);
    fn(base + ".w_cand", p.w_cand);
    fn(base + ".u_cand", p.u_cand);
    fn(base + ".b_cand", p.b_cand);
  };
  gru("text.gru_fw", m.text.forward_gru);
  gru("text.gru_bw", m.text.backward_gru);

  auto ram = [&](std::string_view prefix, auto& p) {
    const std::string base(prefix);
    if (!p.gate_weight.empty()) {
      fn(base + ".gate_weight", p.gate_weight);
      fn(base + ".gate_bias", p.gate_bias);
    }
    if (!p.out_weight.empty()) {
      fn(base + ".out_weight", p.out_weight);
      fn(base + ".out_bias", p.out_bias);
    }
  };
  ram("ram_image", m.ram_image);
  ram("ram_text", m.ram_text);
}

}  // namespace

void ModelParams::for_each_param(const std::function<void(std::string_view, Tensor&)>& fn) {
  visit_params(*this, fn);
}

void ModelParams::for_each_param(
    const std::function<void(std::string_view, const Tensor&)>& fn) const {
  visit_params(*this, fn);
}

void ModelParams::watch_all(Tape& tape) {
  for_each_param([&](std::string_view, Tensor& t) { tape.watch(t); });
}

StepScores ModelParams::score_pair(const Tensor& raw, std::span<const int> ids) const {
  Tape tape;
  const FragmentSet v = encode_image(tape, raw);
  const FragmentSet t = encode_tokens(tape, ids);
  return iterate(v, t, ram_image, ram_text, config.match);
}

}  // namespace imram
