#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include <json.hpp>

#include "headbench/dataset.hpp"
#include "headbench/matrix.hpp"
#include "headbench/model.hpp"

namespace headbench {

// Per-sample logits of one model (or view average) on one split.
struct PredictionSet {
  std::vector<std::string> ids;
  Matrix logits;  // ids.size() x C
  std::string source;

  std::size_t size() const noexcept { return ids.size(); }
  Matrix probabilities() const;
  std::vector<ClassId> top1() const;  // argmax, ties -> lowest class index
  void validate() const;
};

PredictionSet make_predictions(const HeadModel& model, const EmbeddingDataset& dataset,
                               std::span<const std::size_t> indices, std::string source);

// Throws ValidationError unless both sets cover the same ids in the same order with equal width.
void check_aligned(const PredictionSet& a, const PredictionSet& b);

// logits = sum_k w_k L_k / sum_k w_k
PredictionSet average_logits(std::span<const PredictionSet> sets, std::span<const double> weights);

// K Gaussian feature-jitter views for exercising TTA averaging without images.
std::vector<Matrix> jitter_views(const Matrix& features, int views, double sigma, std::uint64_t seed);

struct ConfusionPair {
  ClassId from = 0;
  ClassId to = 0;
  double delta = 0.0;  // validation MacroF1 change when only this pair is applied
  long support = 0;    // samples the pair would modify

  bool operator==(const ConfusionPair&) const = default;
};

// Ordered (primary prediction -> advisor prediction) transitions that may be overridden.
struct PairSet {
  std::vector<ConfusionPair> pairs;

  bool contains(ClassId from, ClassId to) const;
  void validate() const;
  bool operator==(const PairSet&) const = default;
};

// {(BNE, SNE), (MO, VLY), (MY, MMY), (LY, BL)}
PairSet default_pairs(const ClassRegistry& registry);

struct OverrideRecord {
  std::string id;
  ClassId from = 0;
  ClassId to = 0;
};

struct OverrideLog {
  std::vector<OverrideRecord> records;
  std::size_t total = 0;  // samples considered

  double rate() const { return total == 0 ? 0.0 : static_cast<double>(records.size()) / static_cast<double>(total); }
};

struct OverrideResult {
  std::vector<ClassId> labels;
  OverrideLog log;
};

// final = a1 if a1 == a2 and (primary, a1) is in `pairs`, else primary.
OverrideResult gated_override(std::span<const ClassId> primary, std::span<const ClassId> advisor1,
                              std::span<const ClassId> advisor2, std::span<const std::string> ids,
                              const PairSet& pairs);
OverrideResult gated_override(const PredictionSet& primary, const PredictionSet& advisor1,
                              const PredictionSet& advisor2, const PairSet& pairs);

struct DiscoveryOptions {
  double min_delta = 0.0;  // keep pairs with delta strictly greater
  long min_support = 1;
};

// Scores every ordered pair independently against the primary baseline on labelled data.
// Result is ordered by descending delta, then (from, to).
PairSet discover_pairs(std::span<const ClassId> primary, std::span<const ClassId> advisor1,
                       std::span<const ClassId> advisor2, std::span<const ClassId> y_true, int num_classes,
                       const DiscoveryOptions& options = {});
PairSet discover_pairs(const PredictionSet& primary, const PredictionSet& advisor1, const PredictionSet& advisor2,
                       std::span<const ClassId> y_true, const DiscoveryOptions& options = {});

struct EnsembleResult {
  PredictionSet final;  // primary logits, replaced by advisor-1 logits where overridden
  std::vector<ClassId> labels;
  OverrideLog log;
  double override_rate = 0.0;
};

// The MLP model is the primary; cosine and decoupled MLP models are the advisors.
EnsembleResult head_diverse_pipeline(const PredictionSet& primary_mlp, const PredictionSet& cosine_advisor,
                                     const PredictionSet& decoupled_advisor, const PairSet& pairs);

// ---- files --------------------------------------------------------------------

// CSV "id,<class names>" with shortest round-trip decimal logits.
void write_logits_csv(const std::filesystem::path& path, const PredictionSet& set, const ClassRegistry& registry);
PredictionSet read_logits_csv(const std::filesystem::path& path, const ClassRegistry& registry);

// CSV "id,pred[,true]" with class names.
void write_predictions_csv(const std::filesystem::path& path, std::span<const std::string> ids,
                           std::span<const ClassId> predicted, const ClassRegistry& registry,
                           std::optional<std::span<const ClassId>> truth = std::nullopt);

struct PredictionTable {
  std::vector<std::string> ids;
  std::vector<ClassId> predicted;
  std::vector<ClassId> truth;  // empty when the file has no "true" column
};
PredictionTable read_predictions_csv(const std::filesystem::path& path, const ClassRegistry& registry);

nlohmann::json to_json(const PairSet& pairs, const ClassRegistry& registry);
PairSet pairs_from_json(const nlohmann::json& j, const ClassRegistry& registry);

// One JSON object per line: {"id", "from", "to", "pair"}.
void write_override_log(const std::filesystem::path& path, const OverrideLog& log, const ClassRegistry& registry);

}  // namespace headbench
