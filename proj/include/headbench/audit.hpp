#pragma once

#include <cstdint>
#include <cstdio>
#include <filesystem>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <span>
#include <string>
#include <unordered_map>
#include <vector>

#include <json.hpp>

#include "headbench/dataset.hpp"
#include "headbench/ensemble.hpp"

namespace headbench {

enum class CaseOrigin { discordant, agreement_sample };
enum class VerdictCategory { label_error, model_error, ambiguous, confirmed_correct };

std::string_view to_string(CaseOrigin origin);
CaseOrigin parse_origin(std::string_view text);
std::string_view to_string(VerdictCategory category);
VerdictCategory parse_category(std::string_view text);

// Discordant cases: label_error, model_error, ambiguous. Agreement samples: label_error, ambiguous, confirmed_correct.
bool category_allowed(CaseOrigin origin, VerdictCategory category);

struct RankedClass {
  ClassId cls = 0;
  double prob = 0.0;
  bool operator==(const RankedClass&) const = default;
};

struct AuditCase {
  std::string id;
  std::string image_ref;
  ClassId assigned = 0;
  std::vector<RankedClass> top3;  // descending probability, min(3, C) entries
  double margin = 0.0;            // p1 - p2
  CaseOrigin origin = CaseOrigin::discordant;
  Split split = Split::train;

  ClassId predicted() const { return top3.front().cls; }
  bool operator==(const AuditCase&) const = default;
};

struct Verdict {
  std::string case_id;
  VerdictCategory category = VerdictCategory::ambiguous;
  std::string reviewer;
  std::string timestamp;
  std::optional<ClassId> corrected_label;  // present iff category == label_error
};

// Top-k ranking of one probability row (ties -> lowest class index).
std::vector<RankedClass> rank_top(std::span<const double> probs, std::size_t k);

// Samples whose top-1 prediction differs from the assigned label, sorted by ascending margin.
std::vector<AuditCase> build_cases(const PredictionSet& preds, std::span<const ClassId> labels,
                                   std::span<const std::string> image_refs, std::span<const Split> splits);

// Per class, min(per_class_n, available) concordant samples drawn without replacement.
std::vector<AuditCase> sample_agreement_cases(const PredictionSet& preds, std::span<const ClassId> labels,
                                              std::span<const std::string> image_refs, std::span<const Split> splits,
                                              std::size_t per_class_n, std::uint64_t seed);

// Append-only verdict log with last-write-wins per (case, reviewer). Every accepted verdict is
// flushed and fsync'ed before record() returns. Thread-safe.
class VerdictStore {
 public:
  explicit VerdictStore(std::vector<AuditCase> cases, std::optional<std::filesystem::path> log_path = std::nullopt,
                        ClassRegistry registry = {});
  VerdictStore(const VerdictStore&) = delete;
  VerdictStore& operator=(const VerdictStore&) = delete;

  // Validates against the case's origin; throws NotFoundError, RuleViolation or ValidationError.
  void record(Verdict verdict);

  const std::vector<AuditCase>& cases() const noexcept { return cases_; }
  const AuditCase& find_case(const std::string& id) const;
  const ClassRegistry& registry() const noexcept { return registry_; }

  std::vector<Verdict> history() const;
  std::vector<Verdict> active(const std::string& case_id) const;  // one per reviewer
  // Most recent verdict across reviewers.
  std::optional<Verdict> resolved(const std::string& case_id) const;
  std::map<std::string, Verdict> resolved_all() const;
  // Cases whose active verdicts from different reviewers disagree on category.
  std::vector<std::string> conflicts() const;
  std::size_t reviewed_count() const;

 private:
  void validate(const Verdict& v) const;
  void apply(const Verdict& v);

  ClassRegistry registry_;
  std::vector<AuditCase> cases_;
  std::unordered_map<std::string, std::size_t> index_;
  std::vector<Verdict> history_;
  // case id -> reviewer -> position in history_
  std::unordered_map<std::string, std::map<std::string, std::size_t>> active_;
  std::unordered_map<std::string, std::size_t> latest_;
  struct FileCloser {
    void operator()(std::FILE* f) const { std::fclose(f); }
  };
  std::unique_ptr<std::FILE, FileCloser> log_;
  mutable std::mutex mutex_;
};

struct SummaryRow {
  std::string split;  // train / val / test / combined
  long n = 0;         // reviewed cases
  long pending = 0;
  std::map<VerdictCategory, long> counts;

  double percent(VerdictCategory c) const;
};

struct ClassNoiseRate {
  ClassId cls = 0;
  long reviewed = 0;
  long label_errors = 0;
  double rate = 0.0;
};

struct AuditSummary {
  std::vector<SummaryRow> discordant;  // per split present, then combined
  std::vector<SummaryRow> agreement;
  std::vector<ClassNoiseRate> agreement_per_class;
  long total_cases = 0;
  long reviewed = 0;
  long pending = 0;
};

AuditSummary summarize(const VerdictStore& store, std::span<const AuditCase> cases);
AuditSummary summarize(const VerdictStore& store);

struct DirectionalCell {
  long label_errors = 0;
  long reviewed = 0;
  double rate = 0.0;
};

// Rows: assigned label; columns: model top-1. Discordant, reviewed cases only.
struct DirectionalMatrix {
  int num_classes = 0;
  std::vector<DirectionalCell> cells;

  const DirectionalCell& at(ClassId assigned, ClassId predicted) const {
    return cells[static_cast<std::size_t>(assigned * num_classes + predicted)];
  }
};

DirectionalMatrix directional_matrix(const VerdictStore& store, std::span<const AuditCase> cases, int num_classes);

// ---- JSON -----------------------------------------------------------------------

nlohmann::json to_json(const AuditCase& c, const ClassRegistry& registry);
AuditCase case_from_json(const nlohmann::json& j, const ClassRegistry& registry);
nlohmann::json to_json(const Verdict& v, const ClassRegistry& registry);
Verdict verdict_from_json(const nlohmann::json& j, const ClassRegistry& registry);
nlohmann::json to_json(const AuditSummary& s, const ClassRegistry& registry);
nlohmann::json to_json(const DirectionalMatrix& m, const ClassRegistry& registry);

void write_cases(const std::filesystem::path& path, std::span<const AuditCase> cases, const ClassRegistry& registry);
std::vector<AuditCase> read_cases(const std::filesystem::path& path, const ClassRegistry& registry);

std::string utc_timestamp();

}  // namespace headbench
