#pragma once

#include <iosfwd>
#include <span>
#include <string>
#include <vector>

#include <json.hpp>

#include "headbench/registry.hpp"

namespace headbench {

// m[i][j] = number of samples with true class i predicted as j.
class ConfusionMatrix {
 public:
  explicit ConfusionMatrix(int num_classes = 0);

  int num_classes() const noexcept { return num_classes_; }
  long at(ClassId truth, ClassId predicted) const { return counts_[index(truth, predicted)]; }
  long& at(ClassId truth, ClassId predicted) { return counts_[index(truth, predicted)]; }
  long total() const;
  long row_sum(ClassId truth) const;
  long col_sum(ClassId predicted) const;

  bool operator==(const ConfusionMatrix&) const = default;

 private:
  std::size_t index(ClassId t, ClassId p) const {
    return static_cast<std::size_t>(t) * static_cast<std::size_t>(num_classes_) + static_cast<std::size_t>(p);
  }
  int num_classes_ = 0;
  std::vector<long> counts_;
};

ConfusionMatrix confusion(std::span<const ClassId> y_true, std::span<const ClassId> y_pred, int num_classes);

struct ClassScores {
  double precision = 0.0;
  double recall = 0.0;
  double f1 = 0.0;
  long support = 0;
};

// 0/0 terms are defined as 0.
std::vector<ClassScores> per_class_prf(const ConfusionMatrix& cm);
double macro_f1(const ConfusionMatrix& cm);
double tail_macro_f1(const ConfusionMatrix& cm, std::span<const ClassId> tail_set);
double tail_composite(double macro, double tail);

struct MetricReport {
  std::vector<std::string> class_names;
  std::vector<ClassScores> per_class;
  std::vector<ClassId> tail_set;
  double macro_f1 = 0.0;
  double tail_macro_f1 = 0.0;
  double tail_composite = 0.0;
};

MetricReport evaluate(const ConfusionMatrix& cm, const ClassRegistry& registry, std::span<const ClassId> tail_set);
MetricReport evaluate(const ConfusionMatrix& cm, const ClassRegistry& registry);  // default WBC tail set

nlohmann::json to_json(const MetricReport& report);
void write_confusion_csv(std::ostream& os, const ConfusionMatrix& cm, const ClassRegistry& registry);

struct BoundaryReport {
  ClassId a = 0, b = 0;
  long support = 0;  // samples whose true label is a or b
  double f1_a = 0.0, f1_b = 0.0, mean_f1 = 0.0;
  long a_as_b = 0, b_as_a = 0;
};

// Restricted to samples whose true label is a or b; predictions outside {a, b} count as errors.
BoundaryReport boundary_report(std::span<const ClassId> y_true, std::span<const ClassId> y_pred, ClassId a, ClassId b);

// BNE-SNE, MMY-MY, PMY-MMY
std::vector<std::pair<ClassId, ClassId>> default_boundary_pairs(const ClassRegistry& registry);

nlohmann::json to_json(const BoundaryReport& report, const ClassRegistry& registry);

}  // namespace headbench
