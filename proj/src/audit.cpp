#include "headbench/audit.hpp"

#include <algorithm>
#include <chrono>
#include <ctime>
#include <fstream>
#include <numeric>
#include <random>
#include <set>

#include <unistd.h>

#include "headbench/error.hpp"

namespace headbench {

namespace fs = std::filesystem;
using nlohmann::json;

std::string_view to_string(CaseOrigin origin) {
  return origin == CaseOrigin::discordant ? "discordant" : "agreement_sample";
}

CaseOrigin parse_origin(std::string_view text) {
  if (text == "discordant") return CaseOrigin::discordant;
  if (text == "agreement_sample") return CaseOrigin::agreement_sample;
  throw ValidationError("unknown case origin '" + std::string(text) + "'");
}

std::string_view to_string(VerdictCategory category) {
  switch (category) {
    case VerdictCategory::label_error: return "label_error";
    case VerdictCategory::model_error: return "model_error";
    case VerdictCategory::ambiguous: return "ambiguous";
    case VerdictCategory::confirmed_correct: return "confirmed_correct";
  }
  return "ambiguous";
}

VerdictCategory parse_category(std::string_view text) {
  if (text == "label_error") return VerdictCategory::label_error;
  if (text == "model_error") return VerdictCategory::model_error;
  if (text == "ambiguous") return VerdictCategory::ambiguous;
  if (text == "confirmed_correct") return VerdictCategory::confirmed_correct;
  throw ValidationError("unknown verdict category '" + std::string(text) + "'");
}

bool category_allowed(CaseOrigin origin, VerdictCategory category) {
  if (category == VerdictCategory::label_error || category == VerdictCategory::ambiguous) return true;
  return origin == CaseOrigin::discordant ? category == VerdictCategory::model_error
                                          : category == VerdictCategory::confirmed_correct;
}

std::vector<RankedClass> rank_top(std::span<const double> probs, std::size_t k) {
  std::vector<ClassId> order(probs.size());
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(), [&](ClassId a, ClassId b) {
    return probs[static_cast<std::size_t>(a)] > probs[static_cast<std::size_t>(b)];
  });
  std::vector<RankedClass> out;
  for (std::size_t i = 0; i < std::min(k, order.size()); ++i)
    out.push_back({order[i], probs[static_cast<std::size_t>(order[i])]});
  return out;
}

namespace {

void check_inputs(const PredictionSet& preds, std::span<const ClassId> labels, std::span<const std::string> image_refs,
                  std::span<const Split> splits) {
  preds.validate();
  const std::size_t n = preds.size();
  if (labels.size() != n || splits.size() != n || (!image_refs.empty() && image_refs.size() != n))
    throw ValidationError("audit inputs are not aligned with the prediction set");
}

AuditCase make_case(const PredictionSet& preds, const Matrix& probs, std::span<const ClassId> labels,
                    std::span<const std::string> image_refs, std::span<const Split> splits, std::size_t i,
                    CaseOrigin origin) {
  AuditCase c;
  c.id = preds.ids[i];
  c.image_ref = image_refs.empty() ? std::string{} : image_refs[i];
  c.assigned = labels[i];
  c.top3 = rank_top(probs.row(i), 3);
  c.margin = c.top3.size() > 1 ? c.top3[0].prob - c.top3[1].prob : c.top3[0].prob;
  c.origin = origin;
  c.split = splits[i];
  return c;
}

}  // namespace

std::vector<AuditCase> build_cases(const PredictionSet& preds, std::span<const ClassId> labels,
                                   std::span<const std::string> image_refs, std::span<const Split> splits) {
  check_inputs(preds, labels, image_refs, splits);
  const Matrix probs = preds.probabilities();
  std::vector<AuditCase> out;
  for (std::size_t i = 0; i < preds.size(); ++i) {
    auto c = make_case(preds, probs, labels, image_refs, splits, i, CaseOrigin::discordant);
    if (c.predicted() != c.assigned) out.push_back(std::move(c));
  }
  std::stable_sort(out.begin(), out.end(), [](const AuditCase& a, const AuditCase& b) { return a.margin < b.margin; });
  return out;
}

std::vector<AuditCase> sample_agreement_cases(const PredictionSet& preds, std::span<const ClassId> labels,
                                              std::span<const std::string> image_refs, std::span<const Split> splits,
                                              std::size_t per_class_n, std::uint64_t seed) {
  check_inputs(preds, labels, image_refs, splits);
  const Matrix probs = preds.probabilities();
  const auto top1 = preds.top1();
  std::map<ClassId, std::vector<std::size_t>> concordant;
  for (std::size_t i = 0; i < preds.size(); ++i)
    if (top1[i] == labels[i]) concordant[labels[i]].push_back(i);

  std::mt19937_64 rng(seed);
  std::vector<AuditCase> out;
  if (per_class_n == 0) return out;
  for (auto& [cls, members] : concordant) {
    std::shuffle(members.begin(), members.end(), rng);
    const std::size_t take = std::min(per_class_n, members.size());
    std::vector<std::size_t> chosen(members.begin(), members.begin() + static_cast<std::ptrdiff_t>(take));
    std::sort(chosen.begin(), chosen.end());
    for (std::size_t i : chosen)
      out.push_back(make_case(preds, probs, labels, image_refs, splits, i, CaseOrigin::agreement_sample));
  }
  return out;
}

// ---- verdict store ---------------------------------------------------------------

VerdictStore::VerdictStore(std::vector<AuditCase> cases, std::optional<fs::path> log_path, ClassRegistry registry)
    : registry_(std::move(registry)), cases_(std::move(cases)) {
  for (std::size_t i = 0; i < cases_.size(); ++i)
    if (!index_.emplace(cases_[i].id, i).second) throw ValidationError("duplicate case id '" + cases_[i].id + "'");
  if (!log_path) return;

  if (fs::exists(*log_path)) {
    std::ifstream is(*log_path);
    std::vector<std::string> lines;
    std::string line;
    while (std::getline(is, line))
      if (!line.empty()) lines.push_back(line);
    for (std::size_t k = 0; k < lines.size(); ++k) {
      json j;
      try {
        j = json::parse(lines[k]);
      } catch (const json::exception&) {
        // A torn final line is an append interrupted before its fsync completed.
        if (k + 1 == lines.size()) break;
        throw IoError("verdict log '" + log_path->string() + "' is corrupt at line " + std::to_string(k + 1));
      }
      const Verdict v = verdict_from_json(j, registry_);
      validate(v);
      apply(v);
    }
  } else if (log_path->has_parent_path()) {
    fs::create_directories(log_path->parent_path());
  }
  log_.reset(std::fopen(log_path->c_str(), "a"));
  if (!log_) throw IoError("cannot open verdict log '" + log_path->string() + "'");
}

const AuditCase& VerdictStore::find_case(const std::string& id) const {
  auto it = index_.find(id);
  if (it == index_.end()) throw NotFoundError("unknown case '" + id + "'");
  return cases_[it->second];
}

void VerdictStore::validate(const Verdict& v) const {
  const AuditCase& c = find_case(v.case_id);
  if (v.reviewer.empty()) throw ValidationError("verdict needs a reviewer id");
  if (!category_allowed(c.origin, v.category))
    throw RuleViolation("category " + std::string(to_string(v.category)) + " is not allowed for " +
                        std::string(to_string(c.origin)) + " case '" + c.id + "'");
  if (v.category == VerdictCategory::label_error && !v.corrected_label)
    throw ValidationError("label_error verdict needs a corrected_label");
  if (v.category != VerdictCategory::label_error && v.corrected_label)
    throw ValidationError("corrected_label is only allowed with label_error");
  if (v.corrected_label && (*v.corrected_label < 0 || *v.corrected_label >= registry_.size()))
    throw ValidationError("corrected_label out of range");
}

void VerdictStore::apply(const Verdict& v) {
  history_.push_back(v);
  const std::size_t pos = history_.size() - 1;
  active_[v.case_id][v.reviewer] = pos;
  latest_[v.case_id] = pos;
}

void VerdictStore::record(Verdict verdict) {
  std::lock_guard lock(mutex_);
  validate(verdict);
  if (verdict.timestamp.empty()) verdict.timestamp = utc_timestamp();
  if (log_) {
    const std::string line = to_json(verdict, registry_).dump() + "\n";
    if (std::fwrite(line.data(), 1, line.size(), log_.get()) != line.size() || std::fflush(log_.get()) != 0 ||
        ::fsync(::fileno(log_.get())) != 0)
      throw IoError("failed to persist verdict for case '" + verdict.case_id + "'");
  }
  apply(verdict);
}

std::vector<Verdict> VerdictStore::history() const {
  std::lock_guard lock(mutex_);
  return history_;
}

std::vector<Verdict> VerdictStore::active(const std::string& case_id) const {
  std::lock_guard lock(mutex_);
  std::vector<Verdict> out;
  if (auto it = active_.find(case_id); it != active_.end())
    for (const auto& [reviewer, pos] : it->second) out.push_back(history_[pos]);
  return out;
}

std::optional<Verdict> VerdictStore::resolved(const std::string& case_id) const {
  std::lock_guard lock(mutex_);
  if (auto it = latest_.find(case_id); it != latest_.end()) return history_[it->second];
  return std::nullopt;
}

std::map<std::string, Verdict> VerdictStore::resolved_all() const {
  std::lock_guard lock(mutex_);
  std::map<std::string, Verdict> out;
  for (const auto& [id, pos] : latest_) out.emplace(id, history_[pos]);
  return out;
}

std::vector<std::string> VerdictStore::conflicts() const {
  std::lock_guard lock(mutex_);
  std::vector<std::string> out;
  for (const auto& [id, reviewers] : active_) {
    std::set<VerdictCategory> categories;
    for (const auto& [reviewer, pos] : reviewers) categories.insert(history_[pos].category);
    if (categories.size() > 1) out.push_back(id);
  }
  std::sort(out.begin(), out.end());
  return out;
}

std::size_t VerdictStore::reviewed_count() const {
  std::lock_guard lock(mutex_);
  return latest_.size();
}

// ---- summaries -------------------------------------------------------------------

double SummaryRow::percent(VerdictCategory c) const {
  if (n == 0) return 0.0;
  auto it = counts.find(c);
  return it == counts.end() ? 0.0 : 100.0 * static_cast<double>(it->second) / static_cast<double>(n);
}

namespace {

std::vector<SummaryRow> section_rows(std::span<const AuditCase> cases, const std::map<std::string, Verdict>& resolved,
                                     CaseOrigin origin, std::span<const VerdictCategory> categories) {
  std::map<Split, SummaryRow> per_split;
  SummaryRow combined;
  combined.split = "combined";
  for (auto c : categories) combined.counts[c] = 0;
  for (const auto& c : cases) {
    if (c.origin != origin) continue;
    auto [it, inserted] = per_split.try_emplace(c.split);
    if (inserted) {
      it->second.split = std::string(to_string(c.split));
      for (auto cat : categories) it->second.counts[cat] = 0;
    }
    auto v = resolved.find(c.id);
    for (SummaryRow* row : {&it->second, &combined}) {
      if (v == resolved.end()) {
        ++row->pending;
      } else {
        ++row->n;
        ++row->counts[v->second.category];
      }
    }
  }
  std::vector<SummaryRow> rows;
  for (auto& [split, row] : per_split) rows.push_back(std::move(row));
  rows.push_back(std::move(combined));
  return rows;
}

}  // namespace

AuditSummary summarize(const VerdictStore& store, std::span<const AuditCase> cases) {
  const auto resolved = store.resolved_all();
  static constexpr VerdictCategory discordant_cats[] = {VerdictCategory::label_error, VerdictCategory::model_error,
                                                        VerdictCategory::ambiguous};
  static constexpr VerdictCategory agreement_cats[] = {VerdictCategory::label_error, VerdictCategory::ambiguous,
                                                       VerdictCategory::confirmed_correct};
  AuditSummary s;
  s.discordant = section_rows(cases, resolved, CaseOrigin::discordant, discordant_cats);
  s.agreement = section_rows(cases, resolved, CaseOrigin::agreement_sample, agreement_cats);
  std::map<ClassId, ClassNoiseRate> per_class;
  for (const auto& c : cases) {
    const bool reviewed = resolved.count(c.id) > 0;
    ++s.total_cases;
    reviewed ? ++s.reviewed : ++s.pending;
    if (c.origin != CaseOrigin::agreement_sample || !reviewed) continue;
    auto& r = per_class[c.assigned];
    r.cls = c.assigned;
    ++r.reviewed;
    if (resolved.at(c.id).category == VerdictCategory::label_error) ++r.label_errors;
  }
  for (auto& [cls, r] : per_class) {
    r.rate = static_cast<double>(r.label_errors) / static_cast<double>(r.reviewed);
    s.agreement_per_class.push_back(r);
  }
  return s;
}

AuditSummary summarize(const VerdictStore& store) { return summarize(store, store.cases()); }

DirectionalMatrix directional_matrix(const VerdictStore& store, std::span<const AuditCase> cases, int num_classes) {
  const auto resolved = store.resolved_all();
  DirectionalMatrix m;
  m.num_classes = num_classes;
  m.cells.assign(static_cast<std::size_t>(num_classes * num_classes), {});
  for (const auto& c : cases) {
    if (c.origin != CaseOrigin::discordant) continue;
    auto v = resolved.find(c.id);
    if (v == resolved.end()) continue;
    auto& cell = m.cells[static_cast<std::size_t>(c.assigned * num_classes + c.predicted())];
    ++cell.reviewed;
    if (v->second.category == VerdictCategory::label_error) ++cell.label_errors;
  }
  for (auto& cell : m.cells)
    cell.rate = cell.reviewed == 0 ? 0.0 : static_cast<double>(cell.label_errors) / static_cast<double>(cell.reviewed);
  return m;
}

// ---- JSON ------------------------------------------------------------------------

json to_json(const AuditCase& c, const ClassRegistry& registry) {
  json top = json::array();
  for (const auto& r : c.top3) top.push_back({{"class", registry.name(r.cls)}, {"prob", r.prob}});
  return json{{"id", c.id},
              {"image_ref", c.image_ref},
              {"assigned_label", registry.name(c.assigned)},
              {"top3", top},
              {"margin", c.margin},
              {"origin", to_string(c.origin)},
              {"split", to_string(c.split)}};
}

AuditCase case_from_json(const json& j, const ClassRegistry& registry) {
  AuditCase c;
  try {
    c.id = j.at("id").get<std::string>();
    c.image_ref = j.value("image_ref", std::string{});
    c.assigned = registry.index_of(j.at("assigned_label").get<std::string>());
    for (const auto& r : j.at("top3"))
      c.top3.push_back({registry.index_of(r.at("class").get<std::string>()), r.at("prob").get<double>()});
    c.margin = j.at("margin").get<double>();
    c.origin = parse_origin(j.at("origin").get<std::string>());
    c.split = parse_split(j.value("split", std::string("train")));
  } catch (const json::exception& e) {
    throw ValidationError(std::string("malformed audit case: ") + e.what());
  }
  if (c.top3.empty()) throw ValidationError("audit case '" + c.id + "' has no ranked classes");
  return c;
}

json to_json(const Verdict& v, const ClassRegistry& registry) {
  json j{{"case_id", v.case_id}, {"category", to_string(v.category)}, {"reviewer", v.reviewer}, {"ts", v.timestamp}};
  if (v.corrected_label) j["corrected_label"] = registry.name(*v.corrected_label);
  return j;
}

Verdict verdict_from_json(const json& j, const ClassRegistry& registry) {
  if (!j.is_object()) throw ValidationError("verdict must be a JSON object");
  Verdict v;
  try {
    v.case_id = j.value("case_id", std::string{});
    v.category = parse_category(j.at("category").get<std::string>());
    v.reviewer = j.at("reviewer").get<std::string>();
    v.timestamp = j.value("ts", std::string{});
    if (j.contains("corrected_label") && !j.at("corrected_label").is_null())
      v.corrected_label = registry.index_of(j.at("corrected_label").get<std::string>());
  } catch (const json::exception& e) {
    throw ValidationError(std::string("malformed verdict: ") + e.what());
  }
  return v;
}

namespace {

json row_json(const SummaryRow& row) {
  json counts = json::object(), percents = json::object();
  for (const auto& [cat, count] : row.counts) {
    counts[std::string(to_string(cat))] = count;
    percents[std::string(to_string(cat))] = row.percent(cat);
  }
  return json{{"split", row.split}, {"n", row.n}, {"pending", row.pending}, {"counts", counts}, {"percent", percents}};
}

}  // namespace

json to_json(const AuditSummary& s, const ClassRegistry& registry) {
  json disc = json::array(), agree = json::array(), per_class = json::array();
  for (const auto& r : s.discordant) disc.push_back(row_json(r));
  for (const auto& r : s.agreement) agree.push_back(row_json(r));
  for (const auto& r : s.agreement_per_class)
    per_class.push_back({{"class", registry.name(r.cls)}, {"reviewed", r.reviewed}, {"label_errors", r.label_errors},
                         {"rate", r.rate}});
  return json{{"discordant", disc},
              {"agreement", agree},
              {"agreement_per_class", per_class},
              {"total_cases", s.total_cases},
              {"reviewed", s.reviewed},
              {"pending", s.pending}};
}

json to_json(const DirectionalMatrix& m, const ClassRegistry& registry) {
  json cells = json::array();
  for (ClassId i = 0; i < m.num_classes; ++i) {
    json row = json::array();
    for (ClassId j = 0; j < m.num_classes; ++j) {
      const auto& c = m.at(i, j);
      row.push_back({{"label_errors", c.label_errors}, {"reviewed", c.reviewed}, {"rate", c.rate}});
    }
    cells.push_back(row);
  }
  return json{{"classes", registry.names()}, {"rows", "assigned"}, {"cols", "predicted"}, {"cells", cells}};
}

void write_cases(const fs::path& path, std::span<const AuditCase> cases, const ClassRegistry& registry) {
  json out = json::array();
  for (const auto& c : cases) out.push_back(to_json(c, registry));
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  std::ofstream os(path, std::ios::trunc);
  if (!os) throw IoError("cannot open '" + path.string() + "' for writing");
  os << out.dump(2) << '\n';
}

std::vector<AuditCase> read_cases(const fs::path& path, const ClassRegistry& registry) {
  std::ifstream is(path);
  if (!is) throw IoError("cannot open case list '" + path.string() + "'");
  json j;
  try {
    is >> j;
  } catch (const json::exception& e) {
    throw IoError("malformed case list '" + path.string() + "': " + e.what());
  }
  if (!j.is_array()) throw IoError("case list must be a JSON array");
  std::vector<AuditCase> out;
  for (const auto& e : j) out.push_back(case_from_json(e, registry));
  return out;
}

std::string utc_timestamp() {
  const auto now = std::chrono::system_clock::now();
  const std::time_t t = std::chrono::system_clock::to_time_t(now);
  std::tm tm{};
  gmtime_r(&t, &tm);
  char buf[32];
  std::strftime(buf, sizeof(buf), "%Y-%m-%dT%H:%M:%SZ", &tm);
  return buf;
}

}  // namespace headbench
