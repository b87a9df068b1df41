#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include <json.hpp>

#include "headbench/registry.hpp"

namespace headbench {

enum class Split { train, val, test };

std::string_view to_string(Split split);
Split parse_split(std::string_view text);

// Precomputed backbone embeddings with labels, split tags and ids.
// Features are kept as float32 so load/save is bit-exact against the EMB1 file.
struct EmbeddingDataset {
  ClassRegistry registry;
  std::size_t dim = 0;
  std::vector<float> features;  // size() x dim, row-major
  std::vector<ClassId> labels;
  std::vector<Split> splits;
  std::vector<std::string> ids;

  std::size_t size() const noexcept { return labels.size(); }
  std::span<const float> row(std::size_t i) const { return {features.data() + i * dim, dim}; }
  std::vector<std::size_t> indices(Split split) const;

  // Throws ValidationError on any broken invariant (finite rows, label range, unique ids).
  void validate() const;

  bool operator==(const EmbeddingDataset&) const = default;
};

struct CountVector {
  std::vector<long> counts;

  long total() const;
  bool operator==(const CountVector&) const = default;
};

CountVector class_counts(const EmbeddingDataset& dataset, Split split);
CountVector class_counts(std::span<const ClassId> labels, int num_classes);

// Class-uniform sampling with replacement: a class is drawn uniformly among the classes
// present in `labels`, then a position uniformly within that class.
std::vector<std::size_t> balanced_sampler(std::span<const ClassId> labels, std::size_t epoch_len, std::uint64_t seed);

// EMB1: "EMB1", u32 n, u32 d, n*d float32, all little-endian.
void write_features(const std::filesystem::path& path, std::size_t n, std::size_t d, std::span<const float> values);
std::vector<float> read_features(const std::filesystem::path& path, std::size_t& n, std::size_t& d);

EmbeddingDataset load_dataset(const std::filesystem::path& manifest_path);

// Writes the manifest plus sibling files <stem>.emb, <stem>.labels.txt, <stem>.splits.txt, <stem>.ids.txt.
void save_dataset(const EmbeddingDataset& dataset, const std::filesystem::path& manifest_path);

struct SyntheticConfig {
  std::size_t dim = 32;
  std::vector<std::string> class_names = wbc_class_names();
  std::vector<long> counts;  // per class; defaults to the geometric long tail
  std::vector<std::string> chain = wbc_continuum_chain();
  double adjacency_step = 1.5;     // distance between consecutive chain means
  double class_separation = 4.0;   // norm of non-chain class means
  double noise = 1.0;              // isotropic per-coordinate noise
  std::uint64_t seed = 0;

  // Largest class 8192, ratio 0.62, floor 16, in registry order.
  static std::vector<long> long_tail_counts(std::size_t num_classes, long largest = 8192, double ratio = 0.62,
                                            long floor = 16);
  void validate() const;
};

void to_json(nlohmann::json& j, const SyntheticConfig& c);
void from_json(const nlohmann::json& j, SyntheticConfig& c);

// Per class the shuffled samples are split floor(0.6n) / floor(0.1n) / remainder into train/val/test.
EmbeddingDataset generate_synthetic(const SyntheticConfig& config);

}  // namespace headbench
