// SPDX-License-Identifier: Apache-2.0
//
// Acceptance suite: nine go/no-go checks, one printed line each. Exits
// nonzero if any check fails. Criteria 7 and 9 drive the installed CLI
// binary; everything else runs against the library.

#include <chrono>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <numeric>
#include <sstream>
#include <string>
#include <sys/wait.h>
#include <vector>

#include "imram/dataset.hpp"
#include "imram/evaluator.hpp"
#include "imram/matcher.hpp"
#include "imram/model.hpp"
#include "imram/rng.hpp"
#include "imram/trainer.hpp"

namespace fs = std::filesystem;
using namespace imram;

namespace {

int g_failures = 0;

void report(int id, const std::string& name, bool pass, const std::string& detail) {
  std::printf("[%s] criterion %d: %s — %s\n", pass ? "PASS" : "FAIL", id, name.c_str(),
              detail.c_str());
  std::fflush(stdout);
  if (!pass) ++g_failures;
}

double rel_err(double a, double b) {
  return std::fabs(a - b) / std::max({std::fabs(a), std::fabs(b), 1e-8});
}

double now_seconds() {
  using clock = std::chrono::steady_clock;
  static const clock::time_point start = clock::now();
  return std::chrono::duration<double>(clock::now() - start).count();
}

struct CliResult {
  int exit_code;
  std::string output;
};

CliResult run_cli(const std::string& args) {
  static int counter = 0;
  const fs::path out =
      fs::temp_directory_path() / ("imram_accept_out_" + std::to_string(counter++));
  const std::string cmd =
      std::string(IMRAM_CLI_PATH) + " " + args + " > " + out.string() + " 2>&1";
  const int raw = std::system(cmd.c_str());
  CliResult result;
  result.exit_code = WIFEXITED(raw) ? WEXITSTATUS(raw) : -1;
  std::ifstream in(out);
  result.output.assign((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  fs::remove(out);
  return result;
}

fs::path temp_dir(const std::string& name) {
  const fs::path dir = fs::temp_directory_path() / name;
  fs::remove_all(dir);
  fs::create_directories(dir);
  return dir;
}

Tensor random_tensor(Rng& rng, std::size_t rows, std::size_t cols, double lo = -1.0,
                     double hi = 1.0) {
  Tensor t(rows, cols);
  for (double& x : t.data()) x = rng.uniform(lo, hi);
  return t;
}

// ---------------------------------------------------------------------------
// Criterion 1: tape gradients of the full training loss, encoders through
// matching through the hinge objective, against central finite differences.

struct Probe {
  ModelParams model;
  std::vector<TrainItem> batch;
};

double probe_loss(ModelParams& model, const std::vector<TrainItem>& batch, Tape& tape,
                  const GradientMap** grads_out) {
  std::vector<Tensor> images, texts;
  for (const TrainItem& item : batch) {
    images.push_back(model.encode_image(tape, item.raw_regions).vectors);
    texts.push_back(model.encode_tokens(tape, item.token_ids).vectors);
  }
  const Tensor loss =
      tape.hard_triplet_loss(batch_similarity_traced(tape, images, texts, model), 0.2);
  if (grads_out != nullptr) {
    static GradientMap grads;
    grads = tape.backward(loss);
    *grads_out = &grads;
  }
  return loss.at(0, 0);
}

double probe_loss_value(ModelParams& model, const std::vector<TrainItem>& batch) {
  Tape tape;
  return probe_loss(model, batch, tape, nullptr);
}

// Hinge arguments of the 2x2 batch used to exclude kink-adjacent instances.
double min_hinge_distance(const ModelParams& model, const std::vector<TrainItem>& batch) {
  Tape tape;
  std::vector<FragmentSet> images, texts;
  ModelParams& m = const_cast<ModelParams&>(model);
  for (const TrainItem& item : batch) {
    images.push_back(m.encode_image(tape, item.raw_regions));
    texts.push_back(m.encode_tokens(tape, item.token_ids));
  }
  const Tensor s = batch_similarity(images, texts, model);
  double closest = 1e300;
  const std::size_t b = s.rows();
  for (std::size_t q = 0; q < b; ++q) {
    for (std::size_t c = 0; c < b; ++c) {
      if (c == q) continue;
      closest = std::min(closest, std::fabs(0.2 - s.at(q, q) + s.at(q, c)));
      closest = std::min(closest, std::fabs(0.2 - s.at(q, q) + s.at(c, q)));
    }
  }
  return closest;
}

Probe make_probe(std::uint64_t seed) {
  ModelConfig cfg;
  cfg.raw_dim = 8;
  cfg.vocab_size = 12;
  cfg.embed_dim = 6;
  cfg.dim = 16;
  cfg.match.steps = 2;
  cfg.match.variant = Variant::Full;
  cfg.match.lambda = 9.0;
  cfg.match.aggregator = Aggregator::Ours;

  Probe probe;
  probe.model = ModelParams::init(cfg, seed);
  Rng rng(seed ^ 0xABCDEF);
  probe.batch.resize(2);
  for (TrainItem& item : probe.batch) {
    item.raw_regions = random_tensor(rng, 3, cfg.raw_dim);
    item.token_ids.resize(4);
    for (int& id : item.token_ids) id = static_cast<int>(rng.below(cfg.vocab_size));
  }
  return probe;
}

void criterion_1() {
  const double t0 = now_seconds();
  constexpr double kStep = 1e-5;
  constexpr std::size_t kInstances = 20;
  double worst = 0.0;
  std::size_t excluded = 0;

  std::uint64_t seed = 3000;
  for (std::size_t inst = 0; inst < kInstances; ++inst, ++seed) {
    Probe probe = make_probe(seed);
    while (min_hinge_distance(probe.model, probe.batch) < 1e-6) {
      ++excluded;
      probe = make_probe(++seed);
    }

    Tape tape;
    probe.model.watch_all(tape);
    const GradientMap* grads = nullptr;
    (void)probe_loss(probe.model, probe.batch, tape, &grads);

    probe.model.for_each_param([&](std::string_view, Tensor& param) {
      const Tensor& g = grads->at(param);
      for (std::size_t i = 0; i < param.size(); ++i) {
        const double saved = param.data()[i];
        param.data()[i] = saved + kStep;
        const double up = probe_loss_value(probe.model, probe.batch);
        param.data()[i] = saved - kStep;
        const double down = probe_loss_value(probe.model, probe.batch);
        param.data()[i] = saved;
        worst = std::max(worst, rel_err(g.data()[i], (up - down) / (2.0 * kStep)));
      }
    });
  }
  const double elapsed = now_seconds() - t0;
  char detail[160];
  std::snprintf(detail, sizeof(detail),
                "max relative error %.3g over %zu instances (%zu kink-adjacent excluded), %.1f s",
                worst, kInstances, excluded, elapsed);
  report(1, "gradient integrity of the full loss", worst < 1e-4 && elapsed < 60.0, detail);
}

// ---------------------------------------------------------------------------
// Criterion 2: attention and normalization invariants over randomized trials.

void criterion_2() {
  Rng rng(4000);
  double worst_row_sum = 0.0, worst_column = 0.0, worst_recon = 0.0;
  for (int trial = 0; trial < 1000; ++trial) {
    Tape tape;
    const std::size_t m = 1 + rng.below(5), n = 1 + rng.below(6), d = 2 + rng.below(7);
    const Tensor x = random_tensor(rng, m, d);
    const Tensor y = random_tensor(rng, n, d);
    const double lambda = rng.uniform(0.5, 30.0);

    const Tensor sims = pairwise_cosine(tape, x, y);
    const Tensor zbar = normalize_sims(tape, sims);
    const AttentionResult att = attend(tape, zbar, y, lambda);

    for (std::size_t i = 0; i < m; ++i) {
      double total = 0.0;
      for (std::size_t j = 0; j < n; ++j) total += att.weights.at(i, j);
      worst_row_sum = std::max(worst_row_sum, std::fabs(total - 1.0));
      for (std::size_t c = 0; c < d; ++c) {
        double acc = 0.0;
        for (std::size_t j = 0; j < n; ++j) acc += att.weights.at(i, j) * y.at(j, c);
        worst_recon = std::max(worst_recon, std::fabs(att.context.at(i, c) - acc));
      }
    }
    for (std::size_t j = 0; j < n; ++j) {
      double sq = 0.0;
      bool has_positive = false;
      for (std::size_t i = 0; i < m; ++i) {
        sq += zbar.at(i, j) * zbar.at(i, j);
        has_positive = has_positive || sims.at(i, j) > 0.0;
      }
      const double target = has_positive ? 1.0 : 0.0;
      worst_column = std::max(worst_column, std::fabs(std::sqrt(sq) - target));
    }
  }
  char detail[160];
  std::snprintf(detail, sizeof(detail),
                "1000 trials: row-sum err %.2g, column-norm err %.2g, reconstruction err %.2g",
                worst_row_sum, worst_column, worst_recon);
  report(2, "attention and normalization invariants",
         worst_row_sum < 1e-9 && worst_column < 1e-9 && worst_recon < 1e-12, detail);
}

// ---------------------------------------------------------------------------
// Criterion 3: hinge loss equals the exhaustive brute force over negatives.

void criterion_3() {
  Rng rng(5000);
  double worst = 0.0;
  for (int trial = 0; trial < 200; ++trial) {
    const std::size_t b = 2 + trial % 7;
    const Tensor s = random_tensor(rng, b, b);
    double brute = 0.0;
    for (std::size_t q = 0; q < b; ++q) {
      double row_term = 0.0, col_term = 0.0;
      for (std::size_t c = 0; c < b; ++c) {
        if (c == q) continue;
        row_term = std::max(row_term, std::max(0.2 - s.at(q, q) + s.at(q, c), 0.0));
        col_term = std::max(col_term, std::max(0.2 - s.at(q, q) + s.at(c, q), 0.0));
      }
      brute += row_term + col_term;
    }
    worst = std::max(worst, std::fabs(hard_triplet_loss(s, 0.2) - brute));
  }
  char detail[96];
  std::snprintf(detail, sizeof(detail), "200 matrices (B in 2..8), max deviation %.2g", worst);
  report(3, "hard-negative loss equals brute force", worst < 1e-12, detail);
}

// ---------------------------------------------------------------------------
// Shared training driver for criteria 4, 5 and 8.

struct RunOutcome {
  std::size_t steps = 0;
  RetrievalReport report;
  bool reached = false;
};

RunOutcome train_run(const Dataset& ds, const ModelConfig& cfg, std::uint64_t seed, double lr,
                     std::size_t batch_size, std::size_t max_steps, std::size_t eval_every,
                     double target_r1) {
  ModelParams model = ModelParams::init(cfg, seed);
  OptimizerConfig ocfg;
  ocfg.lr = lr;
  Optimizer opt(ocfg);
  const TripletLossConfig lcfg{0.2, batch_size};

  std::vector<std::size_t> order(ds.pair_count());
  std::iota(order.begin(), order.end(), 0);
  std::size_t cursor = order.size();
  std::size_t epoch = 0;

  RunOutcome outcome;
  for (std::size_t step = 1; step <= max_steps; ++step) {
    if (cursor + batch_size > order.size()) {
      Rng shuffle_rng(seed + 1000003ULL * ++epoch);
      for (std::size_t i = order.size(); i > 1; --i) {
        std::swap(order[i - 1], order[shuffle_rng.below(i)]);
      }
      cursor = 0;
    }
    std::vector<TrainItem> batch(batch_size);
    for (std::size_t i = 0; i < batch_size; ++i) {
      const auto& [image_id, text_id] = ds.manifest.pairs[order[cursor + i]];
      batch[i].raw_regions = ds.features.item(image_id);
      batch[i].token_ids = ds.token_ids[text_id];
    }
    cursor += batch_size;
    (void)train_step(model, opt, batch, lcfg);
    outcome.steps = step;

    if (target_r1 > 0.0 && (step % eval_every == 0 || step == max_steps)) {
      outcome.report = evaluate(model, ds);
      if (outcome.report.text_r1 >= target_r1 && outcome.report.image_r1 >= target_r1) {
        outcome.reached = true;
        return outcome;
      }
    }
  }
  outcome.report = evaluate(model, ds);
  return outcome;
}

Dataset synth_into(const std::string& dir_name, std::size_t pairs, double signal,
                   std::size_t raw_dim, std::size_t vocab, std::uint64_t seed) {
  const fs::path dir = temp_dir(dir_name);
  SynthConfig scfg;
  scfg.pairs = pairs;
  scfg.regions = 3;
  scfg.words = 4;
  scfg.raw_dim = raw_dim;
  scfg.vocab_size = vocab;
  scfg.seed = seed;
  scfg.signal = signal;
  synth_dataset(scfg, dir);
  return Dataset::load(dir / "manifest.txt");
}

ModelConfig desk_config(const Dataset& ds, std::size_t dim, std::size_t embed, std::size_t steps,
                        Aggregator aggregator = Aggregator::Ours) {
  ModelConfig cfg;
  cfg.raw_dim = ds.features.raw_dim;
  cfg.vocab_size = ds.vocab.size();
  cfg.embed_dim = embed;
  cfg.dim = dim;
  cfg.match.steps = steps;
  cfg.match.variant = Variant::Full;
  cfg.match.lambda = 9.0;
  cfg.match.aggregator = aggregator;
  return cfg;
}

// Criterion 4: overfit a 32-pair fully aligned set to perfect recall.
void criterion_4() {
  const double t0 = now_seconds();
  const Dataset ds = synth_into("imram_accept_overfit", 32, 1.0, 16, 200, 41);
  const ModelConfig cfg = desk_config(ds, 32, 32, 2);
  const RunOutcome run = train_run(ds, cfg, 7, 2e-3, 16, 500, 20, 100.0);
  const double elapsed = now_seconds() - t0;
  char detail[160];
  std::snprintf(detail, sizeof(detail),
                "R@1 text %.0f%% / image %.0f%% after %zu steps, %.1f s (bound 300 s)",
                run.report.text_r1, run.report.image_r1, run.steps, elapsed);
  report(4, "overfit convergence on the 32-pair set", run.reached && elapsed < 300.0, detail);
}

// Criterion 5: more matching steps do not hurt at moderate signal.
void criterion_5() {
  const std::size_t kSeeds = 5;
  const std::size_t kSteps = 150;
  std::vector<double> rsum_k1, rsum_k2, rsum_k3;
  for (std::size_t s = 0; s < kSeeds; ++s) {
    const Dataset ds =
        synth_into("imram_accept_ktrend_" + std::to_string(s), 128, 0.6, 8, 257, 100 + s);
    for (std::size_t k : {1, 2, 3}) {
      const ModelConfig cfg = desk_config(ds, 16, 16, k);
      const RunOutcome run = train_run(ds, cfg, 500 + s, 2e-3, 16, kSteps, kSteps, 0.0);
      const double rsum = run.report.r_sum();
      (k == 1 ? rsum_k1 : k == 2 ? rsum_k2 : rsum_k3).push_back(rsum);
    }
  }
  auto median = [](std::vector<double> v) {
    std::sort(v.begin(), v.end());
    return v[v.size() / 2];
  };
  const double m1 = median(rsum_k1), m2 = median(rsum_k2), m3 = median(rsum_k3);
  char detail[160];
  std::snprintf(detail, sizeof(detail),
                "median R@sum over %zu seeds: K=1 %.1f, K=2 %.1f (K=3 %.1f reported, no threshold)",
                kSeeds, m1, m2, m3);
  report(5, "iterative matching K-trend", m2 >= m1, detail);
}

// ---------------------------------------------------------------------------
// Criterion 6: full-variant step scores decompose into image plus text parts.

void criterion_6() {
  Rng rng(6000);
  double worst = 0.0;
  for (int trial = 0; trial < 100; ++trial) {
    Tape setup;
    const std::size_t d = 4 + rng.below(9);
    const std::size_t m = 2 + rng.below(4), n = 2 + rng.below(4);
    const std::size_t steps = 1 + rng.below(3);
    Rng prng(7000 + trial);
    const RamParams pv = RamParams::init(d, Aggregator::Ours, 9.0, prng);
    const RamParams pt = RamParams::init(d, Aggregator::Ours, 9.0, prng);
    const FragmentSet v{"v", setup.l2_normalize_rows(random_tensor(rng, m, d), kNormEps)};
    const FragmentSet t{"t", setup.l2_normalize_rows(random_tensor(rng, n, d), kNormEps)};

    const StepScores full =
        iterate(v, t, pv, pt, MatchConfig{steps, Variant::Full, 9.0, Aggregator::Ours});
    const StepScores image =
        iterate(v, t, pv, pt, MatchConfig{steps, Variant::Image, 9.0, Aggregator::Ours});
    const StepScores text =
        iterate(v, t, pv, pt, MatchConfig{steps, Variant::Text, 9.0, Aggregator::Ours});
    for (std::size_t k = 0; k < steps; ++k) {
      worst = std::max(worst,
                       std::fabs(full.per_step[k] - image.per_step[k] - text.per_step[k]));
    }
  }
  char detail[96];
  std::snprintf(detail, sizeof(detail), "100 instances, max deviation %.2g", worst);
  report(6, "variant decomposition", worst < 1e-12, detail);
}

// ---------------------------------------------------------------------------
// Criterion 7: the score command's printed steps sum to its printed total.

void criterion_7() {
  const fs::path dir = temp_dir("imram_accept_score");
  SynthConfig scfg;
  scfg.pairs = 8;
  scfg.raw_dim = 8;
  scfg.vocab_size = 60;
  scfg.seed = 21;
  scfg.signal = 0.7;
  synth_dataset(scfg, dir / "data");
  const Dataset ds = Dataset::load(dir / "data" / "manifest.txt");

  // Arbitrary checkpoints: assorted shapes, policies and one trained model.
  struct Spec {
    std::size_t steps;
    Aggregator aggregator;
    std::uint64_t seed;
  };
  const std::vector<Spec> specs = {{1, Aggregator::Ours, 11},
                                   {3, Aggregator::Add, 12},
                                   {2, Aggregator::Gate, 13},
                                   {4, Aggregator::Mlp, 14},
                                   {3, Aggregator::Att, 15}};
  std::vector<fs::path> checkpoints;
  for (std::size_t i = 0; i < specs.size(); ++i) {
    ModelConfig cfg = desk_config(ds, 12, 10, specs[i].steps, specs[i].aggregator);
    const ModelParams model = ModelParams::init(cfg, specs[i].seed);
    const fs::path path = dir / ("ckpt" + std::to_string(i));
    save_checkpoint(path, model);
    checkpoints.push_back(path);
  }
  {
    // One trained checkpoint alongside the fresh ones.
    const ModelConfig cfg = desk_config(ds, 12, 10, 3);
    ModelParams model = ModelParams::init(cfg, 3);
    OptimizerConfig ocfg;
    ocfg.lr = 2e-3;
    Optimizer opt(ocfg);
    std::vector<TrainItem> batch(4);
    for (std::size_t i = 0; i < 4; ++i) {
      batch[i].raw_regions = ds.features.item(i);
      batch[i].token_ids = ds.token_ids[i];
    }
    for (int step = 0; step < 40; ++step) (void)train_step(model, opt, batch, {0.2, 4});
    const fs::path path = dir / "ckpt_trained";
    save_checkpoint(path, model);
    checkpoints.push_back(path);
  }

  bool all_ok = true;
  double worst = 0.0;
  for (const fs::path& ckpt : checkpoints) {
    const CliResult r = run_cli("score --data " + (dir / "data").string() + " --checkpoint " +
                                ckpt.string() + " --image 3 --text 5");
    if (r.exit_code != 0) {
      all_ok = false;
      continue;
    }
    double sum = 0.0, total = 0.0;
    std::istringstream stream(r.output);
    std::string token;
    std::size_t step_count = 0;
    while (stream >> token) {
      if (token.rfind("score=", 0) == 0) {
        sum += std::stod(token.substr(6));
        ++step_count;
      }
      if (token.rfind("total=", 0) == 0) total = std::stod(token.substr(6));
    }
    all_ok = all_ok && step_count >= 1;
    worst = std::max(worst, std::fabs(sum - total));
  }
  char detail[96];
  std::snprintf(detail, sizeof(detail), "%zu checkpoints, max |sum - total| = %.2g",
                checkpoints.size(), worst);
  report(7, "per-step scores sum to the printed total", all_ok && worst < 1e-12, detail);
}

// ---------------------------------------------------------------------------
// Criterion 8: every aggregation policy trains to high recall.

void criterion_8() {
  const Dataset ds = synth_into("imram_accept_aggregators", 32, 1.0, 16, 200, 41);
  bool all_ok = true;
  std::string detail;
  for (const Aggregator agg :
       {Aggregator::Add, Aggregator::Mlp, Aggregator::Att, Aggregator::Gate, Aggregator::Ours}) {
    const ModelConfig cfg = desk_config(ds, 32, 32, 2, agg);
    bool ok = false;
    std::size_t steps = 0;
    std::string note;
    try {
      const RunOutcome run = train_run(ds, cfg, 7, 2e-3, 16, 1000, 25, 90.0);
      ok = run.reached;
      steps = run.steps;
      note = ok ? std::to_string(steps) : "miss";
    } catch (const NumericError& e) {
      note = "numeric failure";
    }
    if (!detail.empty()) detail += ", ";
    detail += std::string(to_string(agg)) + ":" + note;
    all_ok = all_ok && ok;
  }
  report(8, "aggregator coverage (steps to R@1 >= 90%)", all_ok, detail);
}

// ---------------------------------------------------------------------------
// Criterion 9: binary formats round-trip bit-exactly and corruption is fatal.

void criterion_9() {
  const fs::path dir = temp_dir("imram_accept_formats");
  bool ok = true;
  std::string detail;

  // Feature file: write, read, rewrite; compare bytes.
  SynthConfig scfg;
  scfg.pairs = 4;
  scfg.raw_dim = 8;
  scfg.vocab_size = 40;
  scfg.seed = 33;
  synth_dataset(scfg, dir / "data");
  const fs::path feat = dir / "data" / "features.imft";
  const FeatureStore store = load_features(feat);
  write_features(dir / "copy.imft", store);
  auto bytes_of = [](const fs::path& p) {
    std::ifstream in(p, std::ios::binary);
    return std::string((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  };
  if (bytes_of(feat) != bytes_of(dir / "copy.imft")) {
    ok = false;
    detail += "feature round-trip differs; ";
  }

  // Checkpoint: save, load, save; compare bytes.
  const Dataset ds = Dataset::load(dir / "data" / "manifest.txt");
  const ModelParams model = ModelParams::init(desk_config(ds, 12, 10, 2), 55);
  save_checkpoint(dir / "a.ckpt", model);
  save_checkpoint(dir / "b.ckpt", load_checkpoint(dir / "a.ckpt"));
  if (bytes_of(dir / "a.ckpt") != bytes_of(dir / "b.ckpt")) {
    ok = false;
    detail += "checkpoint round-trip differs; ";
  }

  // Corrupted headers must be rejected with exit code 4 at the CLI surface.
  std::string corrupt = bytes_of(dir / "a.ckpt");
  corrupt[2] = 'x';
  std::ofstream(dir / "bad.ckpt", std::ios::binary).write(corrupt.data(), corrupt.size());
  const CliResult bad_ckpt = run_cli("eval --data " + (dir / "data").string() +
                                     " --checkpoint " + (dir / "bad.ckpt").string());
  if (bad_ckpt.exit_code != 4) {
    ok = false;
    detail += "corrupt checkpoint exit " + std::to_string(bad_ckpt.exit_code) + "; ";
  }

  std::string feat_bytes = bytes_of(feat);
  feat_bytes[0] = 'Q';
  std::ofstream(feat, std::ios::binary | std::ios::trunc)
      .write(feat_bytes.data(), feat_bytes.size());
  const CliResult bad_feat = run_cli("eval --data " + (dir / "data").string() +
                                     " --checkpoint " + (dir / "a.ckpt").string());
  if (bad_feat.exit_code != 4) {
    ok = false;
    detail += "corrupt features exit " + std::to_string(bad_feat.exit_code) + "; ";
  }

  if (ok) detail = "feature and checkpoint bytes identical; corrupt headers exit 4";
  report(9, "format round-trips and corruption handling", ok, detail);
}

}  // namespace

int main() {
  criterion_1();
  criterion_2();
  criterion_3();
  criterion_4();
  criterion_5();
  criterion_6();
  criterion_7();
  criterion_8();
  criterion_9();
  if (g_failures > 0) {
    std::printf("%d criterion(s) failed\n", g_failures);
    return 1;
  }
  std::printf("all 9 criteria passed\n");
  return 0;
}
