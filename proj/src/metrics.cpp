#include "headbench/metrics.hpp"

#include <ostream>

#include "headbench/error.hpp"

namespace headbench {

using nlohmann::json;

ConfusionMatrix::ConfusionMatrix(int num_classes)
    : num_classes_(num_classes), counts_(static_cast<std::size_t>(num_classes) * static_cast<std::size_t>(num_classes), 0) {}

long ConfusionMatrix::total() const {
  long t = 0;
  for (long c : counts_) t += c;
  return t;
}

long ConfusionMatrix::row_sum(ClassId truth) const {
  long t = 0;
  for (ClassId j = 0; j < num_classes_; ++j) t += at(truth, j);
  return t;
}

long ConfusionMatrix::col_sum(ClassId predicted) const {
  long t = 0;
  for (ClassId i = 0; i < num_classes_; ++i) t += at(i, predicted);
  return t;
}

ConfusionMatrix confusion(std::span<const ClassId> y_true, std::span<const ClassId> y_pred, int num_classes) {
  if (y_true.size() != y_pred.size())
    throw ValidationError("confusion: " + std::to_string(y_true.size()) + " labels vs " + std::to_string(y_pred.size()) +
                          " predictions");
  ConfusionMatrix cm(num_classes);
  for (std::size_t i = 0; i < y_true.size(); ++i) {
    if (y_true[i] < 0 || y_true[i] >= num_classes || y_pred[i] < 0 || y_pred[i] >= num_classes)
      throw ValidationError("confusion: label out of range at position " + std::to_string(i));
    ++cm.at(y_true[i], y_pred[i]);
  }
  return cm;
}

namespace {

double ratio(double num, double den) { return den == 0.0 ? 0.0 : num / den; }

}  // namespace

std::vector<ClassScores> per_class_prf(const ConfusionMatrix& cm) {
  std::vector<ClassScores> out(static_cast<std::size_t>(cm.num_classes()));
  for (ClassId c = 0; c < cm.num_classes(); ++c) {
    const double tp = static_cast<double>(cm.at(c, c));
    const double predicted = static_cast<double>(cm.col_sum(c));
    const double actual = static_cast<double>(cm.row_sum(c));
    auto& s = out[static_cast<std::size_t>(c)];
    s.precision = ratio(tp, predicted);
    s.recall = ratio(tp, actual);
    s.f1 = ratio(2.0 * tp, predicted + actual);  // harmonic mean of P and R
    s.support = cm.row_sum(c);
  }
  return out;
}

double macro_f1(const ConfusionMatrix& cm) {
  if (cm.num_classes() == 0) return 0.0;
  const auto scores = per_class_prf(cm);
  double sum = 0.0;
  for (const auto& s : scores) sum += s.f1;
  return sum / static_cast<double>(scores.size());
}

double tail_macro_f1(const ConfusionMatrix& cm, std::span<const ClassId> tail_set) {
  if (tail_set.empty()) throw ValidationError("tail set must not be empty");
  const auto scores = per_class_prf(cm);
  double sum = 0.0;
  for (ClassId c : tail_set) {
    if (c < 0 || c >= cm.num_classes()) throw ValidationError("tail class out of range");
    sum += scores[static_cast<std::size_t>(c)].f1;
  }
  return sum / static_cast<double>(tail_set.size());
}

double tail_composite(double macro, double tail) { return 0.5 * macro + 0.5 * tail; }

MetricReport evaluate(const ConfusionMatrix& cm, const ClassRegistry& registry, std::span<const ClassId> tail_set) {
  if (registry.size() != cm.num_classes()) throw ValidationError("registry and confusion matrix sizes differ");
  MetricReport r;
  r.class_names = registry.names();
  r.per_class = per_class_prf(cm);
  r.tail_set.assign(tail_set.begin(), tail_set.end());
  r.macro_f1 = macro_f1(cm);
  r.tail_macro_f1 = tail_macro_f1(cm, tail_set);
  r.tail_composite = tail_composite(r.macro_f1, r.tail_macro_f1);
  return r;
}

MetricReport evaluate(const ConfusionMatrix& cm, const ClassRegistry& registry) {
  auto tail = resolve_present(registry, wbc_tail_names());
  if (tail.empty())
    for (ClassId c = 0; c < registry.size(); ++c) tail.push_back(c);
  return evaluate(cm, registry, tail);
}

json to_json(const MetricReport& report) {
  json per_class = json::object();
  for (std::size_t c = 0; c < report.per_class.size(); ++c) {
    const auto& s = report.per_class[c];
    per_class[report.class_names[c]] = {
        {"precision", s.precision}, {"recall", s.recall}, {"f1", s.f1}, {"support", s.support}};
  }
  json tail = json::array();
  for (ClassId c : report.tail_set) tail.push_back(report.class_names[static_cast<std::size_t>(c)]);
  return json{{"per_class", per_class},
              {"macro_f1", report.macro_f1},
              {"tail_macro_f1", report.tail_macro_f1},
              {"tail_composite", report.tail_composite},
              {"tail_set", tail}};
}

void write_confusion_csv(std::ostream& os, const ConfusionMatrix& cm, const ClassRegistry& registry) {
  os << "true\\pred";
  for (const auto& n : registry.names()) os << ',' << n;
  os << '\n';
  for (ClassId i = 0; i < cm.num_classes(); ++i) {
    os << registry.name(i);
    for (ClassId j = 0; j < cm.num_classes(); ++j) os << ',' << cm.at(i, j);
    os << '\n';
  }
}

BoundaryReport boundary_report(std::span<const ClassId> y_true, std::span<const ClassId> y_pred, ClassId a, ClassId b) {
  if (a == b) throw ValidationError("boundary pair needs two distinct classes");
  if (y_true.size() != y_pred.size()) throw ValidationError("boundary_report: length mismatch");
  BoundaryReport r;
  r.a = a;
  r.b = b;
  long tp_a = 0, tp_b = 0, pred_a = 0, pred_b = 0, n_a = 0, n_b = 0;
  for (std::size_t i = 0; i < y_true.size(); ++i) {
    const ClassId t = y_true[i], p = y_pred[i];
    if (t != a && t != b) continue;
    ++r.support;
    (t == a ? n_a : n_b) += 1;
    if (p == a) ++pred_a;
    if (p == b) ++pred_b;
    if (t == a && p == a) ++tp_a;
    if (t == b && p == b) ++tp_b;
    if (t == a && p == b) ++r.a_as_b;
    if (t == b && p == a) ++r.b_as_a;
  }
  if (r.support == 0) throw ValidationError("boundary subset is empty");
  r.f1_a = ratio(2.0 * static_cast<double>(tp_a), static_cast<double>(pred_a + n_a));
  r.f1_b = ratio(2.0 * static_cast<double>(tp_b), static_cast<double>(pred_b + n_b));
  r.mean_f1 = 0.5 * (r.f1_a + r.f1_b);
  return r;
}

std::vector<std::pair<ClassId, ClassId>> default_boundary_pairs(const ClassRegistry& registry) {
  std::vector<std::pair<ClassId, ClassId>> out;
  for (const auto& [a, b] : {std::pair{"BNE", "SNE"}, std::pair{"MMY", "MY"}, std::pair{"PMY", "MMY"}}) {
    auto ia = registry.find(a), ib = registry.find(b);
    if (ia && ib) out.emplace_back(*ia, *ib);
  }
  return out;
}

json to_json(const BoundaryReport& r, const ClassRegistry& registry) {
  return json{{"a", registry.name(r.a)},   {"b", registry.name(r.b)},       {"support", r.support},
              {"f1_a", r.f1_a},            {"f1_b", r.f1_b},                {"mean_f1", r.mean_f1},
              {"a_as_b", r.a_as_b},        {"b_as_a", r.b_as_a}};
}

}  // namespace headbench
