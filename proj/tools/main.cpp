// SPDX-License-Identifier: Apache-2.0
//
// Command-line front end: dataset generation, training, evaluation, pairwise
// scoring, gradient checking, and salience analysis.
//
// Exit codes: 0 success, 2 usage or argument errors, 3 numeric failure,
// 4 file or format errors.

#include <CLI11.hpp>

#include <algorithm>
#include <cmath>
#include <cstdarg>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <numeric>
#include <string>
#include <vector>

#include "imram/dataset.hpp"
#include "imram/evaluator.hpp"
#include "imram/matcher.hpp"
#include "imram/model.hpp"
#include "imram/rng.hpp"
#include "imram/trainer.hpp"

namespace {

using namespace imram;

struct TrainFlags {
  std::string data;
  std::string checkpoint;
  std::string init_from;
  std::string log_path;
  std::uint64_t seed = 1;
  std::size_t steps = 3;
  std::string variant = "full";
  std::string aggregator = "ours";
  double lambda = 9.0;
  double margin = 0.2;
  double lr = 2e-4;
  double clip = 2.0;
  std::string optimizer = "adam";
  std::size_t batch = 16;
  std::size_t epochs = 30;
  std::size_t dim = 32;
  std::size_t embed = 300;
};

class Logger {
public:
  explicit Logger(const std::string& path) {
    if (!path.empty()) {
      file_.open(path, std::ios::app);
      if (!file_) throw FormatError("cannot open log file: " + path);
    }
  }
  void line(const std::string& record) {
    std::cout << record << '\n';
    if (file_.is_open()) file_ << record << '\n';
  }

private:
  std::ofstream file_;
};

std::string fmt(const char* format, ...) {
  char buf[512];
  va_list args;
  va_start(args, format);
  std::vsnprintf(buf, sizeof(buf), format, args);
  va_end(args);
  return buf;
}

Dataset load_dataset_dir(const std::string& data) {
  std::filesystem::path path(data);
  if (std::filesystem::is_directory(path)) path /= "manifest.txt";
  if (!std::filesystem::exists(path)) {
    throw FormatError("dataset manifest not found: " + path.string());
  }
  return Dataset::load(path);
}

void check_model_matches_dataset(const ModelParams& model, const Dataset& ds) {
  if (model.config.raw_dim != ds.features.raw_dim) {
    throw std::invalid_argument("model raw dimension " + std::to_string(model.config.raw_dim) +
                                " does not match dataset features " +
                                std::to_string(ds.features.raw_dim));
  }
  if (model.config.vocab_size != ds.vocab.size()) {
    throw std::invalid_argument("model vocabulary " + std::to_string(model.config.vocab_size) +
                                " does not match dataset vocabulary " +
                                std::to_string(ds.vocab.size()));
  }
}

int cmd_gen_data(const SynthConfig& cfg, const std::string& out) {
  synth_dataset(cfg, out);
  std::cout << "dataset=" << out << " pairs=" << cfg.pairs << " regions=" << cfg.regions
            << " words=" << cfg.words << " raw_dim=" << cfg.raw_dim << " vocab=" << cfg.vocab_size
            << " signal=" << cfg.signal << " seed=" << cfg.seed << '\n';
  return 0;
}

int cmd_train(const TrainFlags& flags, const CLI::App* cmd) {
  const Dataset ds = load_dataset_dir(flags.data);
  Logger log(flags.log_path);

  ModelParams model;
  if (!flags.init_from.empty()) {
    model = load_checkpoint(flags.init_from);
    // Shape-bearing flags must not silently disagree with the checkpoint.
    for (const char* name : {"--K", "--variant", "--aggregator", "--lambda", "--dim", "--embed"}) {
      if (cmd->count(name) == 0) continue;
      const bool same =
          (std::string(name) == "--K" && model.config.match.steps == flags.steps) ||
          (std::string(name) == "--variant" &&
           model.config.match.variant == variant_from_string(flags.variant)) ||
          (std::string(name) == "--aggregator" &&
           model.config.match.aggregator == aggregator_from_string(flags.aggregator)) ||
          (std::string(name) == "--lambda" && model.config.match.lambda == flags.lambda) ||
          (std::string(name) == "--dim" && model.config.dim == flags.dim) ||
          (std::string(name) == "--embed" && model.config.embed_dim == flags.embed);
      if (!same) {
        throw std::invalid_argument(std::string(name) +
                                    " conflicts with the checkpoint loaded via --init-from");
      }
    }
  } else {
    ModelConfig cfg;
    cfg.raw_dim = ds.features.raw_dim;
    cfg.vocab_size = ds.vocab.size();
    cfg.embed_dim = flags.embed;
    cfg.dim = flags.dim;
    cfg.match.steps = flags.steps;
    cfg.match.variant = variant_from_string(flags.variant);
    cfg.match.lambda = flags.lambda;
    cfg.match.aggregator = aggregator_from_string(flags.aggregator);
    model = ModelParams::init(cfg, flags.seed);
  }
  check_model_matches_dataset(model, ds);

  OptimizerConfig ocfg;
  ocfg.kind = optimizer_from_string(flags.optimizer);
  ocfg.lr = flags.lr;
  ocfg.clip_norm = flags.clip;
  Optimizer opt(ocfg);
  const TripletLossConfig lcfg{flags.margin, flags.batch};
  if (flags.batch < 2) throw std::invalid_argument("--batch must be at least 2");

  log.line(fmt("config pairs=%zu batch=%zu epochs=%zu K=%zu variant=%s aggregator=%s "
               "lambda=%g margin=%g lr=%g optimizer=%s dim=%zu embed=%zu seed=%llu",
               ds.pair_count(), flags.batch, flags.epochs, model.config.match.steps,
               std::string(to_string(model.config.match.variant)).c_str(),
               std::string(to_string(model.config.match.aggregator)).c_str(),
               model.config.match.lambda, flags.margin, flags.lr, flags.optimizer.c_str(),
               model.config.dim, model.config.embed_dim,
               static_cast<unsigned long long>(flags.seed)));

  double best_rsum = -1.0;
  auto eval_and_keep = [&](std::size_t epoch, double mean_loss) {
    const RetrievalReport report = evaluate(model, ds);
    const double rsum = report.r_sum();
    const bool improved = rsum > best_rsum;
    if (improved) {
      best_rsum = rsum;
      save_checkpoint(flags.checkpoint, model);
    }
    log.line(fmt("epoch=%zu loss=%.17g val_rsum=%.17g best_rsum=%.17g saved=%d", epoch, mean_loss,
                 rsum, best_rsum, improved ? 1 : 0));
  };

  if (flags.epochs == 0) {
    eval_and_keep(0, 0.0);
    return 0;
  }

  std::vector<std::size_t> order(ds.pair_count());
  std::iota(order.begin(), order.end(), 0);
  for (std::size_t epoch = 1; epoch <= flags.epochs; ++epoch) {
    Rng shuffle_rng(flags.seed + 1000003ULL * epoch);
    for (std::size_t i = order.size(); i > 1; --i) {
      std::swap(order[i - 1], order[shuffle_rng.below(i)]);
    }
    double loss_sum = 0.0;
    std::size_t batches = 0;
    for (std::size_t start = 0; start + 2 <= order.size(); start += flags.batch) {
      const std::size_t count = std::min(flags.batch, order.size() - start);
      if (count < 2) break;
      std::vector<TrainItem> batch(count);
      for (std::size_t i = 0; i < count; ++i) {
        const auto& [image_id, text_id] = ds.manifest.pairs[order[start + i]];
        batch[i].raw_regions = ds.features.item(image_id);
        batch[i].token_ids = ds.token_ids[text_id];
      }
      loss_sum += train_step(model, opt, batch, lcfg);
      ++batches;
    }
    eval_and_keep(epoch, batches == 0 ? 0.0 : loss_sum / static_cast<double>(batches));
  }
  return 0;
}

int cmd_eval(const std::string& data, const std::string& checkpoint) {
  const Dataset ds = load_dataset_dir(data);
  const ModelParams model = load_checkpoint(checkpoint);
  check_model_matches_dataset(model, ds);
  const RetrievalReport report = evaluate(model, ds);
  std::cout << format_report_table(report) << format_report_kv(report);
  return 0;
}

int cmd_score(const std::string& data, const std::string& checkpoint, std::size_t image_id,
              std::size_t text_id) {
  const Dataset ds = load_dataset_dir(data);
  const ModelParams model = load_checkpoint(checkpoint);
  check_model_matches_dataset(model, ds);
  if (image_id >= ds.features.item_count) {
    throw std::invalid_argument("--image " + std::to_string(image_id) +
                                " outside dataset of " + std::to_string(ds.features.item_count));
  }
  if (text_id >= ds.captions.size()) {
    throw std::invalid_argument("--text " + std::to_string(text_id) + " outside dataset of " +
                                std::to_string(ds.captions.size()));
  }
  const StepScores scores = model.score_pair(ds.features.item(image_id), ds.token_ids[text_id]);
  for (std::size_t k = 0; k < scores.per_step.size(); ++k) {
    std::cout << fmt("step=%zu score=%.17g", k + 1, scores.per_step[k]) << '\n';
  }
  std::cout << fmt("total=%.17g", scores.total) << '\n';
  return 0;
}

int cmd_salience(const std::string& data, const std::string& checkpoint, std::size_t image_id,
                 std::size_t text_id) {
  const Dataset ds = load_dataset_dir(data);
  const ModelParams model = load_checkpoint(checkpoint);
  check_model_matches_dataset(model, ds);
  if (image_id >= ds.features.item_count || text_id >= ds.captions.size()) {
    throw std::invalid_argument("pair ids outside the dataset");
  }
  const Tensor raw = ds.features.item(image_id);
  const std::vector<int>& ids = ds.token_ids[text_id];
  for (std::size_t k = 1; k <= model.config.match.steps; ++k) {
    const auto salient = salient_concepts(model, raw, ids, k);
    std::string indices, words;
    for (std::size_t j : salient) {
      if (!indices.empty()) {
        indices += ',';
        words += ',';
      }
      indices += std::to_string(j);
      words += ds.vocab.tokens[static_cast<std::size_t>(ids[j])];
    }
    std::cout << "step=" << k << " indices=" << indices << " words=" << words << '\n';
  }
  return 0;
}

// Finite-difference probe over every parameter of a small seeded model.
int cmd_gradcheck(std::uint64_t seed, std::size_t dim, std::size_t regions, std::size_t words,
                  std::size_t steps, std::size_t instances) {
  constexpr double kStep = 1e-5;
  double worst = 0.0;
  for (std::size_t inst = 0; inst < instances; ++inst) {
    ModelConfig cfg;
    cfg.raw_dim = 7;
    cfg.vocab_size = 12;
    cfg.embed_dim = 6;
    cfg.dim = dim;
    cfg.match.steps = steps;
    cfg.match.variant = Variant::Full;
    cfg.match.lambda = 9.0;
    cfg.match.aggregator = Aggregator::Ours;
    ModelParams model = ModelParams::init(cfg, seed + 17 * inst);

    Rng rng(seed + 1000 + inst);
    std::vector<TrainItem> batch(2);
    for (TrainItem& item : batch) {
      item.raw_regions = Tensor(regions, cfg.raw_dim);
      for (double& v : item.raw_regions.data()) v = rng.uniform(-1.0, 1.0);
      item.token_ids.resize(words);
      for (int& id : item.token_ids) id = static_cast<int>(rng.below(cfg.vocab_size));
    }

    auto loss_value = [&](ModelParams& m) {
      Tape tape;
      std::vector<Tensor> images, texts;
      for (const TrainItem& item : batch) {
        images.push_back(m.encode_image(tape, item.raw_regions).vectors);
        texts.push_back(m.encode_tokens(tape, item.token_ids).vectors);
      }
      return tape.hard_triplet_loss(batch_similarity_traced(tape, images, texts, m), 0.2)
          .at(0, 0);
    };

    Tape tape;
    model.watch_all(tape);
    std::vector<Tensor> images, texts;
    for (const TrainItem& item : batch) {
      images.push_back(model.encode_image(tape, item.raw_regions).vectors);
      texts.push_back(model.encode_tokens(tape, item.token_ids).vectors);
    }
    const Tensor loss =
        tape.hard_triplet_loss(batch_similarity_traced(tape, images, texts, model), 0.2);
    const GradientMap grads = tape.backward(loss);

    model.for_each_param([&](std::string_view, Tensor& param) {
      const Tensor& g = grads.at(param);
      for (std::size_t i = 0; i < param.size(); ++i) {
        const double saved = param.data()[i];
        param.data()[i] = saved + kStep;
        const double up = loss_value(model);
        param.data()[i] = saved - kStep;
        const double down = loss_value(model);
        param.data()[i] = saved;
        const double fd = (up - down) / (2.0 * kStep);
        const double err = std::fabs(g.data()[i] - fd) /
                           std::max({std::fabs(g.data()[i]), std::fabs(fd), 1e-8});
        worst = std::max(worst, err);
      }
    });
  }
  std::cout << fmt("max_rel_error=%.6g", worst) << '\n';
  std::cout << "instances=" << instances << '\n';
  return 0;
}

}  // namespace

namespace {

// Expands "--config FILE" into the equivalent command-line flags, inserted
// right after the subcommand token so that explicitly passed flags (which
// come later and take-last) override file values. Lines are key=value;
// blank lines and '#' comments are skipped. Unknown keys are rejected by the
// normal parser afterwards.
void expand_config(std::vector<std::string>& args) {
  std::string config_path;
  for (std::size_t i = 0; i < args.size(); ++i) {
    if (args[i] == "--config") {
      if (i + 1 >= args.size()) throw std::invalid_argument("--config requires a file path");
      config_path = args[i + 1];
      args.erase(args.begin() + static_cast<std::ptrdiff_t>(i),
                 args.begin() + static_cast<std::ptrdiff_t>(i) + 2);
      break;
    }
    if (args[i].rfind("--config=", 0) == 0) {
      config_path = args[i].substr(9);
      args.erase(args.begin() + static_cast<std::ptrdiff_t>(i));
      break;
    }
  }
  if (config_path.empty()) return;
  if (args.empty()) throw std::invalid_argument("--config requires a subcommand");

  std::ifstream in(config_path);
  if (!in) throw std::invalid_argument("cannot open config file: " + config_path);
  std::vector<std::string> injected;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty() || line[0] == '#' || line[0] == ';') continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos || eq == 0) {
      throw std::invalid_argument("config line " + std::to_string(line_no) +
                                  " is not key=value: '" + line + "'");
    }
    injected.push_back("--" + line.substr(0, eq));
    injected.push_back(line.substr(eq + 1));
  }
  args.insert(args.begin() + 1, injected.begin(), injected.end());
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Cross-modal set matching with iterative attention and gated memory"};
  app.require_subcommand(1);

  // gen-data
  SynthConfig synth;
  std::string out_dir;
  auto* gen = app.add_subcommand("gen-data", "Generate a synthetic matched-pair dataset");
  gen->add_option("--out", out_dir, "Output directory")->required();
  gen->add_option("--pairs", synth.pairs, "Number of image/text pairs")
      ->check(CLI::PositiveNumber);
  gen->add_option("--regions", synth.regions, "Regions per image")->check(CLI::PositiveNumber);
  gen->add_option("--words", synth.words, "Words per caption")->check(CLI::PositiveNumber);
  gen->add_option("--raw-dim", synth.raw_dim, "Raw region feature width")
      ->check(CLI::PositiveNumber);
  gen->add_option("--vocab", synth.vocab_size, "Vocabulary size")->check(CLI::PositiveNumber);
  gen->add_option("--signal", synth.signal, "Alignment strength in [0,1]")
      ->check(CLI::Range(0.0, 1.0));
  gen->add_option("--seed", synth.seed, "Generator seed");

  // train
  TrainFlags tf;
  std::string config_help_only;
  auto* train = app.add_subcommand("train", "Train a model and retain the best checkpoint");
  auto take_last = [](CLI::Option* opt) {
    return opt->multi_option_policy(CLI::MultiOptionPolicy::TakeLast);
  };
  train->add_option("--config", config_help_only,
                    "Read options from a key=value file (explicit flags win)");
  take_last(train->add_option("--data", tf.data, "Dataset directory or manifest path")
                ->required());
  take_last(train->add_option("--checkpoint", tf.checkpoint, "Output checkpoint path")
                ->required());
  take_last(train->add_option("--init-from", tf.init_from, "Resume from an existing checkpoint"));
  take_last(train->add_option("--log", tf.log_path, "Append key=value log records to this file"));
  take_last(train->add_option("--seed", tf.seed, "Initialization and shuffling seed"));
  take_last(train->add_option("--K", tf.steps, "Matching steps")->check(CLI::PositiveNumber));
  take_last(train->add_option("--variant", tf.variant, "Grounding variant")
                ->check(CLI::IsMember({"image", "text", "full"})));
  take_last(train->add_option("--aggregator", tf.aggregator, "Memory aggregation policy")
                ->check(CLI::IsMember({"add", "mlp", "att", "gate", "ours"})));
  take_last(train->add_option("--lambda", tf.lambda, "Inverse softmax temperature")
                ->check(CLI::PositiveNumber));
  take_last(
      train->add_option("--margin", tf.margin, "Triplet margin")->check(CLI::NonNegativeNumber));
  take_last(train->add_option("--lr", tf.lr, "Learning rate")->check(CLI::PositiveNumber));
  take_last(train->add_option("--clip", tf.clip, "Global gradient-norm clip (0 disables)"));
  take_last(train->add_option("--optimizer", tf.optimizer, "Optimizer")
                ->check(CLI::IsMember({"adam", "sgd"})));
  take_last(train->add_option("--batch", tf.batch, "Mini-batch size (>= 2)"));
  take_last(
      train->add_option("--epochs", tf.epochs, "Training epochs (0 saves the initial model)"));
  take_last(train->add_option("--dim", tf.dim, "Shared fragment dimension d")
                ->check(CLI::PositiveNumber));
  take_last(train->add_option("--embed", tf.embed, "Word embedding width")
                ->check(CLI::PositiveNumber));

  // eval / score / salience
  std::string data, checkpoint;
  std::size_t image_id = 0, text_id = 0;
  auto* eval = app.add_subcommand("eval", "Report bidirectional retrieval quality");
  eval->add_option("--data", data, "Dataset directory or manifest path")->required();
  eval->add_option("--checkpoint", checkpoint, "Checkpoint path")->required();

  auto* score = app.add_subcommand("score", "Print per-step scores for one pair");
  score->add_option("--data", data, "Dataset directory or manifest path")->required();
  score->add_option("--checkpoint", checkpoint, "Checkpoint path")->required();
  score->add_option("--image", image_id, "Image id");
  score->add_option("--text", text_id, "Text id");

  auto* salience = app.add_subcommand("salience", "Report salient words per matching step");
  salience->add_option("--data", data, "Dataset directory or manifest path")->required();
  salience->add_option("--checkpoint", checkpoint, "Checkpoint path")->required();
  salience->add_option("--image", image_id, "Image id");
  salience->add_option("--text", text_id, "Text id");

  // gradcheck
  std::uint64_t gc_seed = 1;
  std::size_t gc_dim = 8, gc_regions = 3, gc_words = 4, gc_steps = 2, gc_instances = 3;
  auto* gradcheck =
      app.add_subcommand("gradcheck", "Compare tape gradients with finite differences");
  gradcheck->add_option("--seed", gc_seed, "Probe seed");
  gradcheck->add_option("--dim", gc_dim, "Fragment dimension")->check(CLI::PositiveNumber);
  gradcheck->add_option("--regions", gc_regions, "Regions per probe image")
      ->check(CLI::PositiveNumber);
  gradcheck->add_option("--words", gc_words, "Words per probe caption")
      ->check(CLI::PositiveNumber);
  gradcheck->add_option("--K", gc_steps, "Matching steps")->check(CLI::PositiveNumber);
  gradcheck->add_option("--instances", gc_instances, "Probe instances")
      ->check(CLI::PositiveNumber);

  std::vector<std::string> args(argv + 1, argv + argc);
  try {
    expand_config(args);
  } catch (const std::invalid_argument& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 2;
  }
  std::reverse(args.begin(), args.end());

  try {
    app.parse(std::move(args));
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return 2;
  }

  try {
    if (gen->parsed()) return cmd_gen_data(synth, out_dir);
    if (train->parsed()) return cmd_train(tf, train);
    if (eval->parsed()) return cmd_eval(data, checkpoint);
    if (score->parsed()) return cmd_score(data, checkpoint, image_id, text_id);
    if (salience->parsed()) return cmd_salience(data, checkpoint, image_id, text_id);
    if (gradcheck->parsed())
      return cmd_gradcheck(gc_seed, gc_dim, gc_regions, gc_words, gc_steps, gc_instances);
  } catch (const NumericError& e) {
    std::cerr << "numeric failure: " << e.what() << '\n';
    return 3;
  } catch (const FormatError& e) {
    std::cerr << "format error: " << e.what() << '\n';
    return 4;
  } catch (const std::filesystem::filesystem_error& e) {
    std::cerr << "io error: " << e.what() << '\n';
    return 4;
  } catch (const std::logic_error& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 2;
  } catch (const std::exception& e) {
    std::cerr << "unexpected error: " << e.what() << '\n';
    return 1;
  }
  return 0;
}
