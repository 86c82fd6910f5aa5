// SPDX-License-Identifier: Apache-2.0
#include "imram/evaluator.hpp"

#include <cmath>
#include <cstdio>
#include <stdexcept>

#include "imram/matcher.hpp"

namespace imram {

double recall_at_k(const Tensor& sim, const std::vector<std::vector<std::size_t>>& gold,
                   std::size_t k) {
  const std::size_t queries = sim.rows();
  const std::size_t gallery = sim.cols();
  if (queries == 0 || gallery == 0) {
    throw std::invalid_argument("recall_at_k: empty similarity matrix");
  }
  if (k < 1 || k > gallery) {
    throw std::invalid_argument("recall_at_k: k=" + std::to_string(k) +
                                " outside gallery size " + std::to_string(gallery));
  }
  if (gold.size() != queries) {
    throw std::invalid_argument("recall_at_k: ground truth count " +
                                std::to_string(gold.size()) + " does not match query count " +
                                std::to_string(queries));
  }

  std::size_t hits = 0;
  for (std::size_t q = 0; q < queries; ++q) {
    if (gold[q].empty()) {
      throw std::invalid_argument("recall_at_k: query " + std::to_string(q) +
                                  " has no gold indices");
    }
    std::size_t best_rank = gallery;
    for (const std::size_t g : gold[q]) {
      if (g >= gallery) {
        throw std::invalid_argument("recall_at_k: gold index " + std::to_string(g) +
                                    " outside gallery size " + std::to_string(gallery));
      }
      // Rank = items strictly better, plus equal-scored items at lower index.
      std::size_t rank = 0;
      const double s = sim.at(q, g);
      for (std::size_t j = 0; j < gallery; ++j) {
        if (sim.at(q, j) > s || (sim.at(q, j) == s && j < g)) ++rank;
      }
      best_rank = std::min(best_rank, rank);
    }
    if (best_rank < k) ++hits;
  }
  return 100.0 * static_cast<double>(hits) / static_cast<double>(queries);
}

Tensor similarity_matrix(const ModelParams& model, const Dataset& dataset) {
  if (dataset.pair_count() == 0) throw std::invalid_argument("evaluate: empty dataset");
  const std::size_t images = dataset.features.item_count;
  const std::size_t texts = dataset.captions.size();

  Tape tape;  // frozen model: nothing is recorded
  std::vector<FragmentSet> image_sets, text_sets;
  image_sets.reserve(images);
  text_sets.reserve(texts);
  for (std::size_t i = 0; i < images; ++i) {
    image_sets.push_back(model.encode_image(tape, dataset.features.item(i)));
  }
  for (std::size_t t = 0; t < texts; ++t) {
    text_sets.push_back(model.encode_tokens(tape, dataset.token_ids[t]));
  }

  Tensor sims(images, texts);
  for (std::size_t i = 0; i < images; ++i) {
    for (std::size_t t = 0; t < texts; ++t) {
      sims.at(i, t) = iterate(image_sets[i], text_sets[t], model.ram_image, model.ram_text,
                              model.config.match)
                          .total;
    }
  }
  return sims;
}

namespace {

/// Queries that own at least one gold item, with their gold lists, plus the
/// compacted similarity rows for that direction.
struct Direction {
  Tensor sim;
  std::vector<std::vector<std::size_t>> gold;
};

Direction build_direction(const Tensor& sims, bool image_query, const Dataset& dataset) {
  const std::size_t queries = image_query ? sims.rows() : sims.cols();
  const std::size_t gallery = image_query ? sims.cols() : sims.rows();
  std::vector<std::vector<std::size_t>> gold(queries);
  for (const auto& [image_id, text_id] : dataset.manifest.pairs) {
    if (image_query) {
      gold[image_id].push_back(text_id);
    } else {
      gold[text_id].push_back(image_id);
    }
  }
  std::vector<std::size_t> active;
  for (std::size_t q = 0; q < queries; ++q) {
    if (!gold[q].empty()) active.push_back(q);
  }
  Direction dir;
  dir.sim = Tensor(active.size(), gallery);
  dir.gold.resize(active.size());
  for (std::size_t row = 0; row < active.size(); ++row) {
    const std::size_t q = active[row];
    dir.gold[row] = gold[q];
    for (std::size_t j = 0; j < gallery; ++j) {
      dir.sim.at(row, j) = image_query ? sims.at(q, j) : sims.at(j, q);
    }
  }
  return dir;
}

}  // namespace

RetrievalReport report_from_similarity(const Tensor& sims, const Dataset& dataset) {
  const Direction text_dir = build_direction(sims, true, dataset);
  const Direction image_dir = build_direction(sims, false, dataset);
  // Tiny galleries: a cutoff beyond the gallery trivially contains every item.
  auto capped = [](const Direction& dir, std::size_t k) {
    return recall_at_k(dir.sim, dir.gold, std::min(k, dir.sim.cols()));
  };
  RetrievalReport report;
  report.text_r1 = capped(text_dir, 1);
  report.text_r5 = capped(text_dir, 5);
  report.text_r10 = capped(text_dir, 10);
  report.image_r1 = capped(image_dir, 1);
  report.image_r5 = capped(image_dir, 5);
  report.image_r10 = capped(image_dir, 10);
  return report;
}

RetrievalReport evaluate(const ModelParams& model, const Dataset& dataset) {
  return report_from_similarity(similarity_matrix(model, dataset), dataset);
}

std::vector<std::size_t> salient_concepts(const ModelParams& model, const Tensor& raw_image,
                                          std::span<const int> token_ids, std::size_t step_k) {
  if (model.config.match.variant == Variant::Image) {
    throw std::invalid_argument("salient_concepts: requires a text-grounded variant");
  }
  if (step_k < 1 || step_k > model.config.match.steps) {
    throw std::invalid_argument("salient_concepts: step " + std::to_string(step_k) +
                                " outside 1.." + std::to_string(model.config.match.steps));
  }
  Tape tape;
  const FragmentSet regions = model.encode_image(tape, raw_image);
  const FragmentSet words = model.encode_tokens(tape, token_ids);
  const IterateTrace trace = iterate_traced(tape, regions.vectors, words.vectors, model.ram_image,
                                            model.ram_text, model.config.match);
  const Tensor& contexts = trace.text_attention[step_k - 1].context;

  const std::size_t n = words.count();
  std::vector<double> scores(n);
  double mean = 0.0;
  for (std::size_t j = 0; j < n; ++j) {
    double dot = 0.0, nc = 0.0, nw = 0.0;
    for (std::size_t c = 0; c < words.dim(); ++c) {
      dot += contexts.at(j, c) * words.vectors.at(j, c);
      nc += contexts.at(j, c) * contexts.at(j, c);
      nw += words.vectors.at(j, c) * words.vectors.at(j, c);
    }
    scores[j] = dot / (std::max(std::sqrt(nc), kNormEps) * std::max(std::sqrt(nw), kNormEps));
    mean += scores[j];
  }
  mean /= static_cast<double>(n);

  std::vector<std::size_t> salient;
  for (std::size_t j = 0; j < n; ++j) {
    if (scores[j] > mean) salient.push_back(j);
  }
  return salient;
}

std::string format_report_table(const RetrievalReport& r) {
  char buf[256];
  std::string out = "direction        R@1     R@5     R@10\n";
  std::snprintf(buf, sizeof(buf), "text retrieval   %-7.1f %-7.1f %-7.1f\n", r.text_r1, r.text_r5,
                r.text_r10);
  out += buf;
  std::snprintf(buf, sizeof(buf), "image retrieval  %-7.1f %-7.1f %-7.1f\n", r.image_r1,
                r.image_r5, r.image_r10);
  out += buf;
  std::snprintf(buf, sizeof(buf), "R@sum            %.1f\n", r.r_sum());
  out += buf;
  return out;
}

std::string format_report_kv(const RetrievalReport& r) {
  char buf[512];
  std::snprintf(buf, sizeof(buf),
                "text_r1=%.17g\ntext_r5=%.17g\ntext_r10=%.17g\n"
                "image_r1=%.17g\nimage_r5=%.17g\nimage_r10=%.17g\nrsum=%.17g\n",
                r.text_r1, r.text_r5, r.text_r10, r.image_r1, r.image_r5, r.image_r10, r.r_sum());
  return buf;
}

}  // namespace imram
