// SPDX-License-Identifier: Apache-2.0
#include "imram/matcher.hpp"

#include <stdexcept>

namespace imram {

namespace {

/// Mean cosine between matching rows of the original fragments and their
/// step contexts: (1/m) sum_i sim(x_i, c_i).
Tensor mean_row_cosine(Tape& tape, const Tensor& fragments, const Tensor& contexts) {
  const Tensor a = tape.l2_normalize_rows(fragments, kNormEps);
  const Tensor b = tape.l2_normalize_rows(contexts, kNormEps);
  return tape.scale(tape.sum_all(tape.mul(a, b)), 1.0 / static_cast<double>(fragments.rows()));
}

Tensor traced_step_score(Tape& tape, const Tensor& regions, const Tensor* image_ctx,
                         const Tensor& words, const Tensor* text_ctx, Variant variant) {
  switch (variant) {
    case Variant::Image:
      return mean_row_cosine(tape, regions, *image_ctx);
    case Variant::Text:
      return mean_row_cosine(tape, *text_ctx, words);
    case Variant::Full:
      return tape.add(mean_row_cosine(tape, regions, *image_ctx),
                      mean_row_cosine(tape, *text_ctx, words));
  }
  throw std::invalid_argument("step_score: unknown variant");
}

}  // namespace

Variant variant_from_string(std::string_view name) {
  if (name == "image") return Variant::Image;
  if (name == "text") return Variant::Text;
  if (name == "full") return Variant::Full;
  throw std::invalid_argument("unknown model variant: " + std::string(name));
}

std::string_view to_string(Variant v) {
  switch (v) {
    case Variant::Image: return "image";
    case Variant::Text: return "text";
    case Variant::Full: return "full";
  }
  return "?";
}

IterateTrace iterate_traced(Tape& tape, const Tensor& regions, const Tensor& words,
                            const RamParams& ram_image, const RamParams& ram_text,
                            const MatchConfig& cfg) {
  if (cfg.steps < 1) throw std::invalid_argument("iterate: step count must be >= 1");
  if (regions.rows() == 0 || words.rows() == 0) {
    throw std::invalid_argument("iterate: empty fragment set");
  }
  const bool image_side = cfg.variant != Variant::Text;
  const bool text_side = cfg.variant != Variant::Image;

  IterateTrace trace;
  Tensor region_query = regions;
  Tensor word_query = words;
  for (std::size_t k = 1; k <= cfg.steps; ++k) {
    const bool last = k == cfg.steps;
    const Tensor* image_ctx = nullptr;
    const Tensor* text_ctx = nullptr;
    if (image_side) {
      AttentionResult attn = attend_only(tape, region_query, words, ram_image);
      if (!last) region_query = distill(tape, region_query, attn.context, ram_image);
      trace.image_attention.push_back(std::move(attn));
      image_ctx = &trace.image_attention.back().context;
    }
    if (text_side) {
      AttentionResult attn = attend_only(tape, word_query, regions, ram_text);
      if (!last) word_query = distill(tape, word_query, attn.context, ram_text);
      trace.text_attention.push_back(std::move(attn));
      text_ctx = &trace.text_attention.back().context;
    }
    Tensor score = traced_step_score(tape, regions, image_ctx, words, text_ctx, cfg.variant);
    trace.total = k == 1 ? score : tape.add(trace.total, score);
    trace.step_scores.push_back(std::move(score));
  }
  return trace;
}

StepScores iterate(const FragmentSet& regions, const FragmentSet& words,
                   const RamParams& ram_image, const RamParams& ram_text,
                   const MatchConfig& cfg) {
  Tape tape;  // no watched leaves: pure evaluation
  const IterateTrace trace =
      iterate_traced(tape, regions.vectors, words.vectors, ram_image, ram_text, cfg);
  StepScores scores;
  scores.per_step.reserve(trace.step_scores.size());
  for (const Tensor& s : trace.step_scores) scores.per_step.push_back(s.at(0, 0));
  scores.total = total_similarity(scores);
  return scores;
}

double step_score(const Tensor& regions, const Tensor& image_ctx, const Tensor& words,
                  const Tensor& text_ctx, Variant variant) {
  if (variant != Variant::Text && !regions.same_shape(image_ctx)) {
    throw std::invalid_argument("step_score: region contexts " + image_ctx.shape_str() +
                                " do not align with regions " + regions.shape_str());
  }
  if (variant != Variant::Image && !words.same_shape(text_ctx)) {
    throw std::invalid_argument("step_score: word contexts " + text_ctx.shape_str() +
                                " do not align with words " + words.shape_str());
  }
  Tape tape;
  return traced_step_score(tape, regions, &image_ctx, words, &text_ctx, variant).at(0, 0);
}

double total_similarity(const StepScores& scores) {
  if (scores.per_step.empty()) throw std::invalid_argument("total_similarity: no step scores");
  double total = 0.0;
  for (double s : scores.per_step) total += s;
  return total;
}

}  // namespace imram
