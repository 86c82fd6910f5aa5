// SPDX-License-Identifier: Apache-2.0
#include "imram/dataset.hpp"

#include <algorithm>
#include <cctype>
#include <fstream>
#include <set>
#include <sstream>
#include <stdexcept>

#include "binio.hpp"
#include "imram/rng.hpp"

namespace imram {

namespace {

constexpr char kFeatureMagic[4] = {'I', 'M', 'F', 'T'};
constexpr std::uint32_t kFeatureVersion = 1;

std::ifstream open_text(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw FormatError("cannot open file: " + path.string());
  return in;
}

}  // namespace

Tensor FeatureStore::item(std::size_t index) const {
  if (index >= item_count) {
    throw std::invalid_argument("FeatureStore: item " + std::to_string(index) +
                                " out of range (count " + std::to_string(item_count) + ")");
  }
  Tensor t(regions, raw_dim);
  const std::size_t base = index * regions * raw_dim;
  for (std::size_t i = 0; i < static_cast<std::size_t>(regions) * raw_dim; ++i) {
    t.data()[i] = static_cast<double>(values[base + i]);
  }
  return t;
}

void write_features(const std::filesystem::path& path, const FeatureStore& store) {
  if (store.values.size() !=
      static_cast<std::size_t>(store.item_count) * store.regions * store.raw_dim) {
    throw std::invalid_argument("write_features: value count does not match header");
  }
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw FormatError("cannot open feature file for writing: " + path.string());
  out.write(kFeatureMagic, 4);
  binio::put_u32(out, kFeatureVersion);
  binio::put_u32(out, store.item_count);
  binio::put_u32(out, store.regions);
  binio::put_u32(out, store.raw_dim);
  for (float v : store.values) binio::put_f32(out, v);
  out.flush();
  if (!out) throw FormatError("failed writing feature file: " + path.string());
}

FeatureStore load_features(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw FormatError("cannot open feature file: " + path.string());
  std::uint64_t offset = 0;

  char magic[4];
  binio::read_exact(in, magic, 4, offset, "magic");
  offset += 4;
  if (std::string_view(magic, 4) != std::string_view(kFeatureMagic, 4)) {
    throw FormatError("bad feature-file magic at offset 0: " + path.string());
  }
  const std::uint32_t version = binio::get_u32(in, offset, "version");
  if (version != kFeatureVersion) {
    throw FormatError("unsupported feature-file version " + std::to_string(version) +
                      " at offset 4: " + path.string());
  }
  FeatureStore store;
  store.item_count = binio::get_u32(in, offset, "item count");
  store.regions = binio::get_u32(in, offset, "regions per item");
  store.raw_dim = binio::get_u32(in, offset, "raw dimension");
  if (store.regions == 0 || store.raw_dim == 0) {
    throw FormatError("feature-file header declares an empty geometry: " + path.string());
  }

  const std::uint64_t expected_values =
      static_cast<std::uint64_t>(store.item_count) * store.regions * store.raw_dim;
  const std::uint64_t expected_bytes = 20 + 4 * expected_values;
  const std::uint64_t actual_bytes = std::filesystem::file_size(path);
  if (actual_bytes != expected_bytes) {
    throw FormatError("feature file length mismatch: header implies " +
                      std::to_string(expected_bytes) + " bytes, file has " +
                      std::to_string(actual_bytes) + ": " + path.string());
  }
  store.values.resize(expected_values);
  for (std::uint64_t i = 0; i < expected_values; ++i) {
    store.values[i] = binio::get_f32(in, offset, "feature value");
  }
  return store;
}

Vocabulary Vocabulary::load(const std::filesystem::path& path) {
  std::ifstream in = open_text(path);
  Vocabulary vocab;
  std::string line;
  while (std::getline(in, line)) {
    if (!line.empty() && line.back() == '\r') line.pop_back();
    vocab.index.emplace(line, static_cast<int>(vocab.tokens.size()));
    vocab.tokens.push_back(line);
  }
  if (vocab.tokens.empty()) throw FormatError("empty vocabulary file: " + path.string());
  return vocab;
}

void Vocabulary::save(const std::filesystem::path& path) const {
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw FormatError("cannot open vocabulary for writing: " + path.string());
  for (const std::string& t : tokens) out << t << '\n';
}

int Vocabulary::id_of(const std::string& token) const {
  auto it = index.find(token);
  return it == index.end() ? 0 : it->second;
}

std::vector<int> tokenize(const std::string& caption, const Vocabulary& vocab) {
  std::vector<int> ids;
  std::istringstream stream(caption);
  std::string word;
  while (stream >> word) {
    std::transform(word.begin(), word.end(), word.begin(),
                   [](unsigned char c) { return static_cast<char>(std::tolower(c)); });
    ids.push_back(vocab.id_of(word));
  }
  if (ids.empty()) throw std::invalid_argument("tokenize: caption has no tokens");
  return ids;
}

std::vector<std::string> load_captions(const std::filesystem::path& path) {
  std::ifstream in = open_text(path);
  std::vector<std::string> captions;
  std::string line;
  while (std::getline(in, line)) {
    if (!line.empty() && line.back() == '\r') line.pop_back();
    captions.push_back(line);
  }
  return captions;
}

void write_manifest(const std::filesystem::path& path, const DatasetManifest& manifest) {
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw FormatError("cannot open manifest for writing: " + path.string());
  out << "name=" << manifest.name << '\n';
  out << "features=" << manifest.features_file << '\n';
  out << "captions=" << manifest.captions_file << '\n';
  out << "vocabulary=" << manifest.vocab_file << '\n';
  out << "split=" << manifest.split << '\n';
  out << "pairs:\n";
  for (const auto& [image_id, text_id] : manifest.pairs) {
    out << image_id << '\t' << text_id << '\n';
  }
}

DatasetManifest load_manifest(const std::filesystem::path& path) {
  std::ifstream in = open_text(path);
  DatasetManifest manifest;
  std::string line;
  bool in_pairs = false;
  std::set<std::pair<std::uint32_t, std::uint32_t>> seen;
  while (std::getline(in, line)) {
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    if (!in_pairs) {
      if (line == "pairs:") {
        in_pairs = true;
        continue;
      }
      const auto eq = line.find('=');
      if (eq == std::string::npos) {
        throw FormatError("manifest line is not key=value: '" + line + "' in " + path.string());
      }
      const std::string key = line.substr(0, eq);
      const std::string value = line.substr(eq + 1);
      if (key == "name") manifest.name = value;
      else if (key == "features") manifest.features_file = value;
      else if (key == "captions") manifest.captions_file = value;
      else if (key == "vocabulary") manifest.vocab_file = value;
      else if (key == "split") manifest.split = value;
      else throw FormatError("unknown manifest key '" + key + "' in " + path.string());
      continue;
    }
    const auto tab = line.find('\t');
    if (tab == std::string::npos) {
      throw FormatError("manifest pair line is missing a tab: '" + line + "' in " + path.string());
    }
    std::uint32_t image_id = 0, text_id = 0;
    try {
      image_id = static_cast<std::uint32_t>(std::stoul(line.substr(0, tab)));
      text_id = static_cast<std::uint32_t>(std::stoul(line.substr(tab + 1)));
    } catch (const std::exception&) {
      throw FormatError("manifest pair line is not numeric: '" + line + "' in " + path.string());
    }
    if (!seen.emplace(image_id, text_id).second) {
      throw FormatError("duplicate manifest pair " + std::to_string(image_id) + "/" +
                        std::to_string(text_id) + " in " + path.string());
    }
    manifest.pairs.emplace_back(image_id, text_id);
  }
  if (manifest.features_file.empty() || manifest.captions_file.empty() ||
      manifest.vocab_file.empty()) {
    throw FormatError("manifest is missing a required file entry: " + path.string());
  }
  if (manifest.pairs.empty()) {
    throw FormatError("manifest declares no pairs: " + path.string());
  }
  return manifest;
}

Dataset Dataset::load(const std::filesystem::path& manifest_path) {
  Dataset ds;
  ds.manifest = load_manifest(manifest_path);
  const auto dir = manifest_path.parent_path();
  ds.features = load_features(dir / ds.manifest.features_file);
  ds.vocab = Vocabulary::load(dir / ds.manifest.vocab_file);
  ds.captions = load_captions(dir / ds.manifest.captions_file);
  ds.token_ids.reserve(ds.captions.size());
  for (const std::string& caption : ds.captions) {
    ds.token_ids.push_back(tokenize(caption, ds.vocab));
  }
  for (const auto& [image_id, text_id] : ds.manifest.pairs) {
    if (image_id >= ds.features.item_count) {
      throw FormatError("manifest references image " + std::to_string(image_id) +
                        " beyond feature count " + std::to_string(ds.features.item_count));
    }
    if (text_id >= ds.captions.size()) {
      throw FormatError("manifest references text " + std::to_string(text_id) +
                        " beyond caption count " + std::to_string(ds.captions.size()));
    }
  }
  return ds;
}

void synth_dataset(const SynthConfig& cfg, const std::filesystem::path& out_dir) {
  if (cfg.pairs < 1 || cfg.regions < 1 || cfg.words < 1 || cfg.raw_dim < 1 ||
      cfg.vocab_size < 2) {
    throw std::invalid_argument("synth_dataset: all counts must be >= 1 (vocab >= 2)");
  }
  if (cfg.signal < 0.0 || cfg.signal > 1.0) {
    throw std::invalid_argument("synth_dataset: signal_strength must lie in [0, 1], got " +
                                std::to_string(cfg.signal));
  }
  const std::size_t band = (cfg.vocab_size - 1) / cfg.pairs;
  if (band == 0) {
    throw std::invalid_argument("synth_dataset: vocabulary too small for " +
                                std::to_string(cfg.pairs) +
                                " concept bands (need vocab_size > pairs)");
  }
  std::filesystem::create_directories(out_dir);
  Rng rng(cfg.seed);

  FeatureStore store;
  store.item_count = static_cast<std::uint32_t>(cfg.pairs);
  store.regions = static_cast<std::uint32_t>(cfg.regions);
  store.raw_dim = static_cast<std::uint32_t>(cfg.raw_dim);
  store.values.reserve(cfg.pairs * cfg.regions * cfg.raw_dim);

  Vocabulary vocab;
  vocab.tokens.push_back("<unk>");
  for (std::size_t i = 1; i < cfg.vocab_size; ++i) {
    vocab.tokens.push_back("w" + std::to_string(i));
  }
  for (std::size_t i = 0; i < vocab.tokens.size(); ++i) {
    vocab.index.emplace(vocab.tokens[i], static_cast<int>(i));
  }

  std::vector<std::string> captions;
  captions.reserve(cfg.pairs);
  DatasetManifest manifest;
  manifest.name = "synth-" + std::to_string(cfg.pairs) + "x" + std::to_string(cfg.regions) + "x" +
                  std::to_string(cfg.words);
  manifest.features_file = "features.imft";
  manifest.captions_file = "captions.txt";
  manifest.vocab_file = "vocab.txt";
  manifest.split = "train";

  std::vector<double> latent(cfg.raw_dim);
  for (std::size_t p = 0; p < cfg.pairs; ++p) {
    for (double& c : latent) c = rng.gaussian();
    for (std::size_t r = 0; r < cfg.regions; ++r) {
      for (std::size_t c = 0; c < cfg.raw_dim; ++c) {
        const double noise = rng.gaussian();
        store.values.push_back(
            static_cast<float>(cfg.signal * latent[c] + (1.0 - cfg.signal) * noise));
      }
    }
    std::string caption;
    for (std::size_t w = 0; w < cfg.words; ++w) {
      const bool aligned = rng.next_double() < cfg.signal;
      const std::size_t id = aligned ? 1 + p * band + rng.below(band)
                                     : 1 + rng.below(cfg.vocab_size - 1);
      if (w > 0) caption += ' ';
      caption += vocab.tokens[id];
    }
    captions.push_back(std::move(caption));
    manifest.pairs.emplace_back(static_cast<std::uint32_t>(p), static_cast<std::uint32_t>(p));
  }

  write_features(out_dir / manifest.features_file, store);
  vocab.save(out_dir / manifest.vocab_file);
  {
    std::ofstream out(out_dir / manifest.captions_file, std::ios::trunc);
    if (!out) throw FormatError("cannot write captions file in " + out_dir.string());
    for (const std::string& c : captions) out << c << '\n';
  }
  write_manifest(out_dir / "manifest.txt", manifest);
}

}  // namespace imram
