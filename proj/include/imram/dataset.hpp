// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <unordered_map>
#include <utility>
#include <vector>

#include "imram/tensor.hpp"

namespace imram {

/// In-memory image-region feature store. On disk ("IMFT" files) values are
/// 32-bit floats; they are promoted to 64-bit for all computation. Every item
/// holds the same number of regions.
struct FeatureStore {
  std::uint32_t item_count = 0;
  std::uint32_t regions = 0;  // m, fixed per file
  std::uint32_t raw_dim = 0;
  std::vector<float> values;  // item-major, then region-major, row-major dims

  /// Region matrix (m x raw_dim) of one item, promoted to doubles.
  Tensor item(std::size_t index) const;
};

/// Feature file header: magic "IMFT", version u32, item count u32,
/// regions-per-item u32, raw dimension u32; body: per item, m rows of raw_dim
/// 32-bit IEEE-754 little-endian values. The file length must match the
/// header exactly.
void write_features(const std::filesystem::path& path, const FeatureStore& store);
FeatureStore load_features(const std::filesystem::path& path);

/// Plain-text vocabulary: one token per line, line number = token id, line 0
/// reserved for the unknown token.
struct Vocabulary {
  std::vector<std::string> tokens;
  std::unordered_map<std::string, int> index;

  static Vocabulary load(const std::filesystem::path& path);
  void save(const std::filesystem::path& path) const;
  std::size_t size() const { return tokens.size(); }
  /// Token id, 0 (unknown) when absent.
  int id_of(const std::string& token) const;
};

/// Lowercased whitespace tokenization; unknown words map to id 0. Captions
/// with no tokens are rejected.
std::vector<int> tokenize(const std::string& caption, const Vocabulary& vocab);

/// One caption per line; line number = text id.
std::vector<std::string> load_captions(const std::filesystem::path& path);

/// Plain-text manifest: key=value lines, then a "pairs:" section with one
/// "image_id<TAB>text_id" line per matched pair. File paths are relative to
/// the manifest's directory.
struct DatasetManifest {
  std::string name;
  std::string features_file;
  std::string captions_file;
  std::string vocab_file;
  std::string split = "train";
  std::vector<std::pair<std::uint32_t, std::uint32_t>> pairs;
};

void write_manifest(const std::filesystem::path& path, const DatasetManifest& manifest);
DatasetManifest load_manifest(const std::filesystem::path& path);

/// A fully loaded dataset: features, vocabulary, raw and tokenized captions.
struct Dataset {
  DatasetManifest manifest;
  FeatureStore features;
  Vocabulary vocab;
  std::vector<std::string> captions;
  std::vector<std::vector<int>> token_ids;

  static Dataset load(const std::filesystem::path& manifest_path);
  std::size_t pair_count() const { return manifest.pairs.size(); }
};

struct SynthConfig {
  std::size_t pairs = 32;
  std::size_t regions = 3;   // m
  std::size_t words = 4;     // n
  std::size_t raw_dim = 16;
  std::size_t vocab_size = 200;
  std::uint64_t seed = 1;
  double signal = 1.0;  // in [0, 1]
};

/// Writes a synthetic matched-pair dataset (features.imft, captions.txt,
/// vocab.txt, manifest.txt) into out_dir. Each pair owns a latent concept
/// vector; regions blend the concept with noise and token ids come from a
/// concept-linked band of the vocabulary, both controlled by signal: 1 gives
/// deterministic region/token alignment, 0 pure noise. Fully reproducible
/// from the seed via the pinned generator.
void synth_dataset(const SynthConfig& cfg, const std::filesystem::path& out_dir);

}  // namespace imram
