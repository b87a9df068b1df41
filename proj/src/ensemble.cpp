#include "headbench/ensemble.hpp"

#include <algorithm>
#include <fstream>
#include <random>
#include <set>

#include "headbench/error.hpp"
#include "headbench/metrics.hpp"
#include "headbench/text.hpp"
#include "headbench/trainer.hpp"

namespace headbench {

namespace fs = std::filesystem;
using nlohmann::json;

Matrix PredictionSet::probabilities() const {
  Matrix out(logits.rows, logits.cols);
  for (std::size_t i = 0; i < logits.rows; ++i) {
    const auto p = softmax(logits.row(i));
    std::copy(p.begin(), p.end(), out.row(i).begin());
  }
  return out;
}

std::vector<ClassId> PredictionSet::top1() const { return argmax_rows(logits); }

void PredictionSet::validate() const {
  if (logits.rows != ids.size()) throw ValidationError("prediction set '" + source + "': ids and logits rows differ");
  if (logits.cols == 0 && !ids.empty()) throw ValidationError("prediction set '" + source + "' has no classes");
}

PredictionSet make_predictions(const HeadModel& model, const EmbeddingDataset& dataset,
                               std::span<const std::size_t> indices, std::string source) {
  PredictionSet out;
  out.source = std::move(source);
  for (std::size_t i : indices) out.ids.push_back(dataset.ids[i]);
  out.logits = predict_logits(model, gather_features(dataset, indices));
  return out;
}

void check_aligned(const PredictionSet& a, const PredictionSet& b) {
  a.validate();
  b.validate();
  if (a.logits.cols != b.logits.cols)
    throw ValidationError("prediction sets '" + a.source + "' and '" + b.source + "' have different class counts");
  if (a.ids != b.ids) throw ValidationError("prediction sets '" + a.source + "' and '" + b.source + "' are not aligned by id");
}

PredictionSet average_logits(std::span<const PredictionSet> sets, std::span<const double> weights) {
  if (sets.empty()) throw ValidationError("average_logits needs at least one prediction set");
  if (weights.size() != sets.size()) throw ValidationError("average_logits needs one weight per set");
  double total = 0.0;
  for (double w : weights) {
    if (!(w >= 0.0) || !std::isfinite(w)) throw ValidationError("ensemble weights must be finite and >= 0");
    total += w;
  }
  if (total == 0.0) throw ValidationError("ensemble weights must not all be zero");
  for (const auto& s : sets) check_aligned(sets[0], s);

  PredictionSet out;
  out.ids = sets[0].ids;
  out.logits = Matrix(sets[0].logits.rows, sets[0].logits.cols);
  out.source = "avg(";
  for (std::size_t k = 0; k < sets.size(); ++k) {
    if (k) out.source += ",";
    out.source += sets[k].source + "*" + text::format_double(weights[k]);
  }
  out.source += ")";
  for (std::size_t i = 0; i < out.logits.data.size(); ++i) {
    double acc = 0.0;
    for (std::size_t k = 0; k < sets.size(); ++k) acc += weights[k] * sets[k].logits.data[i];
    out.logits.data[i] = acc / total;
  }
  return out;
}

std::vector<Matrix> jitter_views(const Matrix& features, int views, double sigma, std::uint64_t seed) {
  if (views < 1) throw ValidationError("need at least one view");
  if (!(sigma >= 0.0)) throw ValidationError("jitter sigma must be >= 0");
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> normal(0.0, 1.0);
  std::vector<Matrix> out;
  for (int v = 0; v < views; ++v) {
    Matrix m = features;
    if (sigma > 0.0)
      for (auto& x : m.data) x += sigma * normal(rng);
    out.push_back(std::move(m));
  }
  return out;
}

bool PairSet::contains(ClassId from, ClassId to) const {
  return std::any_of(pairs.begin(), pairs.end(), [&](const ConfusionPair& p) { return p.from == from && p.to == to; });
}

void PairSet::validate() const {
  std::set<std::pair<ClassId, ClassId>> seen;
  for (const auto& p : pairs) {
    if (p.from == p.to) throw ValidationError("confusion pair must join two different classes");
    if (!seen.emplace(p.from, p.to).second) throw ValidationError("duplicate ordered confusion pair");
  }
}

PairSet default_pairs(const ClassRegistry& registry) {
  PairSet out;
  for (const auto& [from, to] : {std::pair{"BNE", "SNE"}, std::pair{"MO", "VLY"}, std::pair{"MY", "MMY"},
                                 std::pair{"LY", "BL"}})
    out.pairs.push_back({registry.index_of(from), registry.index_of(to), 0.0, 0});
  return out;
}

OverrideResult gated_override(std::span<const ClassId> primary, std::span<const ClassId> advisor1,
                              std::span<const ClassId> advisor2, std::span<const std::string> ids,
                              const PairSet& pairs) {
  const std::size_t n = primary.size();
  if (advisor1.size() != n || advisor2.size() != n || ids.size() != n)
    throw ValidationError("gated_override: inputs are not aligned");
  OverrideResult out;
  out.labels.assign(primary.begin(), primary.end());
  out.log.total = n;
  for (std::size_t i = 0; i < n; ++i) {
    if (advisor1[i] == advisor2[i] && pairs.contains(primary[i], advisor1[i])) {
      out.labels[i] = advisor1[i];
      out.log.records.push_back({ids[i], primary[i], advisor1[i]});
    }
  }
  return out;
}

OverrideResult gated_override(const PredictionSet& primary, const PredictionSet& advisor1,
                              const PredictionSet& advisor2, const PairSet& pairs) {
  check_aligned(primary, advisor1);
  check_aligned(primary, advisor2);
  return gated_override(primary.top1(), advisor1.top1(), advisor2.top1(), primary.ids, pairs);
}

PairSet discover_pairs(std::span<const ClassId> primary, std::span<const ClassId> advisor1,
                       std::span<const ClassId> advisor2, std::span<const ClassId> y_true, int num_classes,
                       const DiscoveryOptions& options) {
  const std::size_t n = primary.size();
  if (n == 0) throw ValidationError("pair discovery needs a non-empty validation set");
  if (advisor1.size() != n || advisor2.size() != n || y_true.size() != n)
    throw ValidationError("discover_pairs: inputs are not aligned");

  const ConfusionMatrix baseline = confusion(y_true, primary, num_classes);
  const double base_f1 = macro_f1(baseline);

  // Samples eligible for each ordered pair: primary = from, both advisors = to.
  std::vector<std::vector<std::size_t>> eligible(static_cast<std::size_t>(num_classes * num_classes));
  for (std::size_t i = 0; i < n; ++i)
    if (advisor1[i] == advisor2[i] && advisor1[i] != primary[i])
      eligible[static_cast<std::size_t>(primary[i] * num_classes + advisor1[i])].push_back(i);

  PairSet out;
  for (ClassId from = 0; from < num_classes; ++from) {
    for (ClassId to = 0; to < num_classes; ++to) {
      const auto& samples = eligible[static_cast<std::size_t>(from * num_classes + to)];
      if (from == to || static_cast<long>(samples.size()) < options.min_support) continue;
      ConfusionMatrix cm = baseline;
      for (std::size_t i : samples) {
        --cm.at(y_true[i], from);
        ++cm.at(y_true[i], to);
      }
      const double delta = macro_f1(cm) - base_f1;
      if (delta > options.min_delta) out.pairs.push_back({from, to, delta, static_cast<long>(samples.size())});
    }
  }
  std::stable_sort(out.pairs.begin(), out.pairs.end(), [](const ConfusionPair& a, const ConfusionPair& b) {
    if (a.delta != b.delta) return a.delta > b.delta;
    if (a.from != b.from) return a.from < b.from;
    return a.to < b.to;
  });
  return out;
}

PairSet discover_pairs(const PredictionSet& primary, const PredictionSet& advisor1, const PredictionSet& advisor2,
                       std::span<const ClassId> y_true, const DiscoveryOptions& options) {
  check_aligned(primary, advisor1);
  check_aligned(primary, advisor2);
  return discover_pairs(primary.top1(), advisor1.top1(), advisor2.top1(), y_true,
                        static_cast<int>(primary.logits.cols), options);
}

EnsembleResult head_diverse_pipeline(const PredictionSet& primary_mlp, const PredictionSet& cosine_advisor,
                                     const PredictionSet& decoupled_advisor, const PairSet& pairs) {
  auto decision = gated_override(primary_mlp, cosine_advisor, decoupled_advisor, pairs);
  EnsembleResult out;
  out.final = primary_mlp;
  out.final.source = "head_diverse(" + primary_mlp.source + "|" + cosine_advisor.source + "," +
                     decoupled_advisor.source + ")";
  const auto primary_labels = primary_mlp.top1();
  for (std::size_t i = 0; i < primary_mlp.size(); ++i) {
    if (decision.labels[i] == primary_labels[i]) continue;
    const auto src = cosine_advisor.logits.row(i);
    std::copy(src.begin(), src.end(), out.final.logits.row(i).begin());
  }
  out.labels = std::move(decision.labels);
  out.log = std::move(decision.log);
  out.override_rate = out.log.rate();
  return out;
}

// ---- files --------------------------------------------------------------------

namespace {

std::vector<std::string> read_all_lines(const fs::path& path) {
  std::ifstream is(path);
  if (!is) throw IoError("cannot open '" + path.string() + "'");
  std::vector<std::string> lines;
  std::string line;
  while (std::getline(is, line)) {
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (!line.empty()) lines.push_back(line);
  }
  return lines;
}

std::ofstream open_out(const fs::path& path) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  std::ofstream os(path, std::ios::trunc);
  if (!os) throw IoError("cannot open '" + path.string() + "' for writing");
  return os;
}

}  // namespace

void write_logits_csv(const fs::path& path, const PredictionSet& set, const ClassRegistry& registry) {
  set.validate();
  if (set.logits.cols != static_cast<std::size_t>(registry.size()))
    throw ValidationError("logits width does not match the class registry");
  auto os = open_out(path);
  os << "id";
  for (const auto& n : registry.names()) os << ',' << n;
  os << '\n';
  for (std::size_t i = 0; i < set.size(); ++i) {
    text::require_plain_field(set.ids[i]);
    os << set.ids[i];
    for (double v : set.logits.row(i)) os << ',' << text::format_double(v);
    os << '\n';
  }
  if (!os) throw IoError("write failed for '" + path.string() + "'");
}

PredictionSet read_logits_csv(const fs::path& path, const ClassRegistry& registry) {
  const auto lines = read_all_lines(path);
  if (lines.empty()) throw IoError("'" + path.string() + "' has no header");
  const auto header = text::split_csv(lines[0]);
  std::vector<std::string> expected{"id"};
  expected.insert(expected.end(), registry.names().begin(), registry.names().end());
  if (header != expected) throw IoError("'" + path.string() + "': header does not match the class registry");

  PredictionSet out;
  out.source = path.filename().string();
  const std::size_t C = static_cast<std::size_t>(registry.size());
  out.logits = Matrix(lines.size() - 1, C);
  for (std::size_t r = 1; r < lines.size(); ++r) {
    const auto fields = text::split_csv(lines[r]);
    if (fields.size() != C + 1) throw IoError("'" + path.string() + "': line " + std::to_string(r + 1) + " has wrong width");
    out.ids.push_back(fields[0]);
    for (std::size_t k = 0; k < C; ++k) out.logits(r - 1, k) = text::parse_double(fields[k + 1]);
  }
  return out;
}

void write_predictions_csv(const fs::path& path, std::span<const std::string> ids, std::span<const ClassId> predicted,
                           const ClassRegistry& registry, std::optional<std::span<const ClassId>> truth) {
  if (ids.size() != predicted.size() || (truth && truth->size() != ids.size()))
    throw ValidationError("predictions export: inputs are not aligned");
  auto os = open_out(path);
  os << (truth ? "id,pred,true\n" : "id,pred\n");
  for (std::size_t i = 0; i < ids.size(); ++i) {
    text::require_plain_field(ids[i]);
    os << ids[i] << ',' << registry.name(predicted[i]);
    if (truth) os << ',' << registry.name((*truth)[i]);
    os << '\n';
  }
  if (!os) throw IoError("write failed for '" + path.string() + "'");
}

PredictionTable read_predictions_csv(const fs::path& path, const ClassRegistry& registry) {
  const auto lines = read_all_lines(path);
  if (lines.empty()) throw IoError("'" + path.string() + "' has no header");
  const auto header = text::split_csv(lines[0]);
  const bool has_truth = header == std::vector<std::string>{"id", "pred", "true"};
  if (!has_truth && header != std::vector<std::string>{"id", "pred"})
    throw IoError("'" + path.string() + "': expected header id,pred[,true]");
  PredictionTable t;
  for (std::size_t r = 1; r < lines.size(); ++r) {
    const auto fields = text::split_csv(lines[r]);
    if (fields.size() != header.size()) throw IoError("'" + path.string() + "': line " + std::to_string(r + 1) + " has wrong width");
    t.ids.push_back(fields[0]);
    t.predicted.push_back(registry.index_of(fields[1]));
    if (has_truth) t.truth.push_back(registry.index_of(fields[2]));
  }
  return t;
}

json to_json(const PairSet& pairs, const ClassRegistry& registry) {
  json out = json::array();
  for (const auto& p : pairs.pairs)
    out.push_back({{"from", registry.name(p.from)}, {"to", registry.name(p.to)}, {"delta", p.delta}, {"support", p.support}});
  return out;
}

PairSet pairs_from_json(const json& j, const ClassRegistry& registry) {
  if (!j.is_array()) throw ValidationError("pair set must be a JSON array");
  PairSet out;
  for (const auto& e : j)
    out.pairs.push_back({registry.index_of(e.at("from").get<std::string>()), registry.index_of(e.at("to").get<std::string>()),
                         e.value("delta", 0.0), e.value("support", 0L)});
  out.validate();
  return out;
}

void write_override_log(const fs::path& path, const OverrideLog& log, const ClassRegistry& registry) {
  auto os = open_out(path);
  for (const auto& r : log.records) {
    const auto& from = registry.name(r.from);
    const auto& to = registry.name(r.to);
    os << json{{"id", r.id}, {"from", from}, {"to", to}, {"pair", from + "->" + to}}.dump() << '\n';
  }
  if (!os) throw IoError("write failed for '" + path.string() + "'");
}

}  // namespace headbench
