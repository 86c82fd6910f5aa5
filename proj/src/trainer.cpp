// SPDX-License-Identifier: Apache-2.0
#include "imram/trainer.hpp"

#include <cmath>
#include <fstream>
#include <map>
#include <stdexcept>

#include "binio.hpp"

namespace imram {

namespace {

constexpr char kCheckpointMagic[4] = {'I', 'M', 'R', 'M'};
constexpr std::uint32_t kCheckpointVersion = 1;

}  // namespace

OptimizerKind optimizer_from_string(std::string_view name) {
  if (name == "adam") return OptimizerKind::Adam;
  if (name == "sgd") return OptimizerKind::Sgd;
  throw std::invalid_argument("unknown optimizer: " + std::string(name));
}

std::string_view to_string(OptimizerKind k) {
  return k == OptimizerKind::Adam ? "adam" : "sgd";
}

void Optimizer::step(ModelParams& model, const GradientMap& grads) {
  struct Entry {
    std::string name;
    Tensor* param;
    const Tensor* grad;
  };
  std::vector<Entry> entries;
  double sq_norm = 0.0;
  model.for_each_param([&](std::string_view name, Tensor& t) {
    const Tensor& g = grads.at(t);
    for (double v : g.data()) sq_norm += v * v;
    entries.push_back(Entry{std::string(name), &t, &g});
  });

  const double norm = std::sqrt(sq_norm);
  const double clip =
      (config_.clip_norm > 0.0 && norm > config_.clip_norm) ? config_.clip_norm / norm : 1.0;

  ++steps_;
  for (Entry& e : entries) {
    Tensor& p = *e.param;
    if (config_.kind == OptimizerKind::Sgd) {
      for (std::size_t i = 0; i < p.size(); ++i)
        p.data()[i] -= config_.lr * clip * e.grad->data()[i];
      continue;
    }
    auto [it, inserted] = moments_.try_emplace(
        e.name, Tensor(p.rows(), p.cols()), Tensor(p.rows(), p.cols()));
    Tensor& m = it->second.first;
    Tensor& v = it->second.second;
    const double bc1 = 1.0 - std::pow(config_.beta1, static_cast<double>(steps_));
    const double bc2 = 1.0 - std::pow(config_.beta2, static_cast<double>(steps_));
    for (std::size_t i = 0; i < p.size(); ++i) {
      const double g = clip * e.grad->data()[i];
      m.data()[i] = config_.beta1 * m.data()[i] + (1.0 - config_.beta1) * g;
      v.data()[i] = config_.beta2 * v.data()[i] + (1.0 - config_.beta2) * g * g;
      const double m_hat = m.data()[i] / bc1;
      const double v_hat = v.data()[i] / bc2;
      p.data()[i] -= config_.lr * m_hat / (std::sqrt(v_hat) + config_.eps);
    }
  }
}

Tensor batch_similarity_traced(Tape& tape, std::span<const Tensor> image_sets,
                               std::span<const Tensor> text_sets, const ModelParams& model) {
  if (image_sets.size() != text_sets.size()) {
    throw std::invalid_argument("batch_similarity: image and text counts differ");
  }
  const std::size_t b = image_sets.size();
  if (b < 2) {
    throw std::invalid_argument("batch_similarity: batch must contain at least 2 pairs, got " +
                                std::to_string(b));
  }
  std::vector<Tensor> rows;
  rows.reserve(b);
  for (std::size_t a = 0; a < b; ++a) {
    std::vector<Tensor> entries;
    entries.reserve(b);
    for (std::size_t c = 0; c < b; ++c) {
      const IterateTrace trace = iterate_traced(tape, image_sets[a], text_sets[c],
                                                model.ram_image, model.ram_text,
                                                model.config.match);
      entries.push_back(trace.total);
    }
    rows.push_back(tape.stack_cols(entries));
  }
  return tape.stack_rows(rows);
}

Tensor batch_similarity(std::span<const FragmentSet> images, std::span<const FragmentSet> texts,
                        const ModelParams& model) {
  if (images.size() != texts.size()) {
    throw std::invalid_argument("batch_similarity: image and text counts differ");
  }
  const std::size_t b = images.size();
  if (b < 2) {
    throw std::invalid_argument("batch_similarity: batch must contain at least 2 pairs, got " +
                                std::to_string(b));
  }
  Tensor sims(b, b);
  for (std::size_t a = 0; a < b; ++a) {
    for (std::size_t c = 0; c < b; ++c) {
      sims.at(a, c) =
          iterate(images[a], texts[c], model.ram_image, model.ram_text, model.config.match).total;
    }
  }
  return sims;
}

double hard_triplet_loss(const Tensor& sims, double margin) {
  Tape tape;
  return tape.hard_triplet_loss(sims, margin).at(0, 0);
}

double train_step(ModelParams& model, Optimizer& opt, std::span<const TrainItem> batch,
                  const TripletLossConfig& cfg) {
  if (batch.size() < 2) {
    throw std::invalid_argument("train_step: batch must contain at least 2 pairs, got " +
                                std::to_string(batch.size()));
  }
  Tape tape;
  model.watch_all(tape);

  std::vector<Tensor> image_sets, text_sets;
  image_sets.reserve(batch.size());
  text_sets.reserve(batch.size());
  for (const TrainItem& item : batch) {
    image_sets.push_back(model.encode_image(tape, item.raw_regions).vectors);
    text_sets.push_back(model.encode_tokens(tape, item.token_ids).vectors);
  }

  const Tensor sims = batch_similarity_traced(tape, image_sets, text_sets, model);
  if (!sims.all_finite()) {
    throw NumericError("train_step: non-finite pair similarity on a batch of " +
                       std::to_string(batch.size()) + " pairs (optimizer step " +
                       std::to_string(opt.steps_taken()) + ")");
  }
  const Tensor loss = tape.hard_triplet_loss(sims, cfg.margin);
  const double loss_value = loss.at(0, 0);
  if (!std::isfinite(loss_value)) {
    throw NumericError("train_step: non-finite loss " + std::to_string(loss_value) +
                       " on a batch of " + std::to_string(batch.size()) + " pairs (optimizer step " +
                       std::to_string(opt.steps_taken()) + ")");
  }
  const GradientMap grads = tape.backward(loss);
  opt.step(model, grads);
  return loss_value;
}

void save_checkpoint(const std::filesystem::path& path, const ModelParams& model) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw FormatError("cannot open checkpoint for writing: " + path.string());
  out.write(kCheckpointMagic, 4);
  binio::put_u32(out, kCheckpointVersion);

  auto record = [&](std::string_view name, const Tensor& t) {
    binio::put_u32(out, static_cast<std::uint32_t>(name.size()));
    out.write(name.data(), static_cast<std::streamsize>(name.size()));
    binio::put_u32(out, static_cast<std::uint32_t>(t.rows()));
    binio::put_u32(out, static_cast<std::uint32_t>(t.cols()));
    for (double v : t.data()) binio::put_f64(out, v);
  };

  auto scalar = [](double v) {
    Tensor t(1, 1);
    t.at(0, 0) = v;
    return t;
  };
  record("meta.steps", scalar(static_cast<double>(model.config.match.steps)));
  record("meta.variant", scalar(static_cast<double>(model.config.match.variant)));
  record("meta.aggregator", scalar(static_cast<double>(model.config.match.aggregator)));
  record("meta.lambda", scalar(model.config.match.lambda));
  model.for_each_param([&](std::string_view name, const Tensor& t) { record(name, t); });

  out.flush();
  if (!out) throw FormatError("failed writing checkpoint: " + path.string());
}

ModelParams load_checkpoint(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw FormatError("cannot open checkpoint: " + path.string());
  std::uint64_t offset = 0;

  char magic[4];
  binio::read_exact(in, magic, 4, offset, "magic");
  offset += 4;
  if (std::string_view(magic, 4) != std::string_view(kCheckpointMagic, 4)) {
    throw FormatError("bad checkpoint magic at offset 0 in " + path.string());
  }
  const std::uint32_t version = binio::get_u32(in, offset, "version");
  if (version != kCheckpointVersion) {
    throw FormatError("unsupported checkpoint version " + std::to_string(version) +
                      " at offset 4 in " + path.string());
  }

  std::map<std::string, Tensor> records;
  while (true) {
    in.peek();
    if (in.eof()) break;
    const std::uint32_t name_len = binio::get_u32(in, offset, "record name length");
    std::string name(name_len, '\0');
    binio::read_exact(in, name.data(), name_len, offset, "record name");
    offset += name_len;
    const std::uint32_t rows = binio::get_u32(in, offset, "record rows");
    const std::uint32_t cols = binio::get_u32(in, offset, "record cols");
    Tensor t(rows, cols);
    for (double& v : t.data()) v = binio::get_f64(in, offset, name.c_str());
    if (!records.emplace(std::move(name), std::move(t)).second) {
      throw FormatError("duplicate checkpoint record in " + path.string());
    }
  }

  auto take = [&](const std::string& name) {
    auto it = records.find(name);
    if (it == records.end()) {
      throw FormatError("checkpoint is missing record '" + name + "': " + path.string());
    }
    Tensor t = std::move(it->second);
    records.erase(it);
    return t;
  };
  auto take_scalar = [&](const std::string& name) {
    const Tensor t = take(name);
    if (t.rows() != 1 || t.cols() != 1) {
      throw FormatError("checkpoint record '" + name + "' must be 1x1");
    }
    return t.at(0, 0);
  };

  ModelParams m;
  const double steps = take_scalar("meta.steps");
  const double variant_code = take_scalar("meta.variant");
  const double aggregator_code = take_scalar("meta.aggregator");
  m.config.match.lambda = take_scalar("meta.lambda");
  if (steps < 1 || variant_code < 0 || variant_code > 2 || aggregator_code < 0 ||
      aggregator_code > 4 || !(m.config.match.lambda > 0.0)) {
    throw FormatError("checkpoint metadata out of range: " + path.string());
  }
  m.config.match.steps = static_cast<std::size_t>(steps);
  m.config.match.variant = static_cast<Variant>(static_cast<int>(variant_code));
  m.config.match.aggregator = static_cast<Aggregator>(static_cast<int>(aggregator_code));

  m.image_proj.weight = take("image_proj.weight");
  m.image_proj.bias = take("image_proj.bias");
  m.text.embedding = take("text.embedding");
  auto load_gru = [&](const std::string& base, GruParams& p) {
    p.w_update = take(base + ".w_update");
    p.u_update = take(base + ".u_update");
    p.b_update = take(base + ".b_update");
    p.w_reset = take(base + ".w_reset");
    p.u_reset = take(base + ".u_reset");
    p.b_reset = take(base + ".b_reset");
    p.w_cand = take(base + ".w_cand");
    p.u_cand = take(base + ".u_cand");
    p.b_cand = take(base + ".b_cand");
  };
  load_gru("text.gru_fw", m.text.forward_gru);
  load_gru("text.gru_bw", m.text.backward_gru);

  auto load_ram = [&](const std::string& base, RamParams& p) {
    p.aggregator = m.config.match.aggregator;
    p.lambda = m.config.match.lambda;
    const bool has_gate = p.aggregator == Aggregator::Ours || p.aggregator == Aggregator::Gate ||
                          p.aggregator == Aggregator::Att;
    const bool has_out = p.aggregator == Aggregator::Ours || p.aggregator == Aggregator::Mlp;
    if (has_gate) {
      p.gate_weight = take(base + ".gate_weight");
      p.gate_bias = take(base + ".gate_bias");
    }
    if (has_out) {
      p.out_weight = take(base + ".out_weight");
      p.out_bias = take(base + ".out_bias");
    }
  };
  load_ram("ram_image", m.ram_image);
  load_ram("ram_text", m.ram_text);

  if (!records.empty()) {
    throw FormatError("unexpected checkpoint record '" + records.begin()->first +
                      "': " + path.string());
  }

  m.config.raw_dim = m.image_proj.weight.rows();
  m.config.dim = m.image_proj.weight.cols();
  m.config.vocab_size = m.text.embedding.rows();
  m.config.embed_dim = m.text.embedding.cols();
  if (m.text.forward_gru.hidden_dim() != m.config.dim ||
      m.text.forward_gru.input_dim() != m.config.embed_dim ||
      m.text.backward_gru.hidden_dim() != m.config.dim) {
    throw FormatError("checkpoint parameter shapes are inconsistent: " + path.string());
  }
  return m;
}

}  // namespace imram
