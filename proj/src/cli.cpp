#include "headbench/cli.hpp"

#include <algorithm>
#include <array>
#include <cstdlib>
#include <fstream>
#include <iostream>
#include <map>
#include <optional>
#include <sstream>

#include <CLI11.hpp>
#include <httplib.h>
#include <json.hpp>
#include <openssl/evp.h>

#include "headbench/audit.hpp"
#include "headbench/dataset.hpp"
#include "headbench/ensemble.hpp"
#include "headbench/error.hpp"
#include "headbench/metrics.hpp"
#include "headbench/model.hpp"
#include "headbench/review_service.hpp"
#include "headbench/run_config.hpp"
#include "headbench/text.hpp"
#include "headbench/trainer.hpp"

namespace headbench {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

class Digest {
 public:
  Digest() : ctx_(EVP_MD_CTX_new()) {
    if (!ctx_ || EVP_DigestInit_ex(ctx_, EVP_sha256(), nullptr) != 1) throw Error("sha256 init failed");
  }
  ~Digest() { EVP_MD_CTX_free(ctx_); }
  Digest(const Digest&) = delete;
  Digest& operator=(const Digest&) = delete;

  void update(const void* data, std::size_t n) {
    if (EVP_DigestUpdate(ctx_, data, n) != 1) throw Error("sha256 update failed");
  }
  std::string hex() {
    std::array<unsigned char, EVP_MAX_MD_SIZE> md{};
    unsigned int len = 0;
    if (EVP_DigestFinal_ex(ctx_, md.data(), &len) != 1) throw Error("sha256 final failed");
    static constexpr char digits[] = "0123456789abcdef";
    std::string out;
    for (unsigned int i = 0; i < len; ++i) {
      out += digits[md[i] >> 4];
      out += digits[md[i] & 0xf];
    }
    return out;
  }

 private:
  EVP_MD_CTX* ctx_;
};

// Content digest of a dataset, independent of where its files live.
std::string dataset_digest(const EmbeddingDataset& ds) {
  Digest d;
  const auto add = [&](const std::string& text) {
    const std::uint64_t n = text.size();
    d.update(&n, sizeof n);
    d.update(text.data(), text.size());
  };
  for (const auto& name : ds.registry.names()) add(name);
  for (const auto& id : ds.ids) add(id);
  d.update(ds.labels.data(), ds.labels.size() * sizeof(ClassId));
  for (Split sp : ds.splits) add(std::string(to_string(sp)));
  d.update(ds.features.data(), ds.features.size() * sizeof(float));
  return d.hex();
}

}  // namespace

std::string sha256_hex(std::string_view bytes) {
  Digest d;
  d.update(bytes.data(), bytes.size());
  return d.hex();
}

std::string sha256_file(const fs::path& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw IoError("cannot open '" + path.string() + "'");
  Digest d;
  std::array<char, 1 << 16> buf{};
  while (is) {
    is.read(buf.data(), buf.size());
    d.update(buf.data(), static_cast<std::size_t>(is.gcount()));
  }
  return d.hex();
}

namespace {

// State shared by every subcommand: the uniform --out/--seed/--config flags and the run manifest.
struct Run {
  std::string command;
  std::string out_arg;
  std::uint64_t seed = 0;
  std::string config_path;
  json config = json::object();
  json inputs = json::array();
  std::vector<std::string> args;
  std::vector<CLI::Option*> seed_options;
  fs::path out;

  // --seed wins over a "seed" key in the config file.
  std::uint64_t effective_seed() {
    for (auto* o : seed_options)
      if (o->count() > 0) return seed;
    if (config.contains("seed")) seed = config.at("seed").get<std::uint64_t>();
    return seed;
  }

  void load_config() {
    if (!config_path.empty()) {
      config = read_json_file(require_input(config_path));
    }
  }

  fs::path require_input(const fs::path& p) {
    if (!fs::exists(p)) throw NotFoundError("input '" + p.string() + "' does not exist");
    const bool seen = std::any_of(inputs.begin(), inputs.end(), [&](const json& e) { return e["path"] == p.string(); });
    if (!seen && fs::is_regular_file(p)) inputs.push_back({{"path", p.string()}, {"sha256", sha256_file(p)}});
    return p;
  }

  void prepare_out() {
    fs::path p = out_arg;
    if (p.is_relative()) {
      if (const char* root = std::getenv("HEADBENCH_OUT_ROOT"); root && *root) p = fs::path(root) / p;
    }
    fs::create_directories(p);
    out = p;
  }

  void write_manifest(const json& effective_config) const {
    json m;
    m["command"] = command;
    m["args"] = args;
    m["inputs"] = inputs;
    m["config"] = effective_config;
    m["seed"] = seed;
    m["config_hash"] = sha256_hex(json{{"command", command}, {"config", effective_config}, {"seed", seed}}.dump());
    write_json(out / "run_manifest.json", m);
  }

  static void write_json(const fs::path& path, const json& j) {
    std::ofstream os(path, std::ios::trunc);
    if (!os) throw IoError("cannot open '" + path.string() + "' for writing");
    os << j.dump(2) << '\n';
    if (!os) throw IoError("write to '" + path.string() + "' failed");
  }
};

ClassRegistry registry_from_logits(const fs::path& path) {
  std::ifstream is(path);
  if (!is) throw IoError("cannot open '" + path.string() + "'");
  std::string header;
  std::getline(is, header);
  if (!header.empty() && header.back() == '\r') header.pop_back();
  auto fields = text::split_csv(header);
  if (fields.size() < 2 || fields.front() != "id") throw IoError("'" + path.string() + "': expected header id,<classes>");
  fields.erase(fields.begin());
  return ClassRegistry(std::move(fields));
}

std::unordered_map<std::string, std::size_t> id_index(const EmbeddingDataset& ds) {
  std::unordered_map<std::string, std::size_t> out;
  for (std::size_t i = 0; i < ds.ids.size(); ++i) out.emplace(ds.ids[i], i);
  return out;
}

std::vector<std::size_t> rows_for(std::span<const std::string> ids, const EmbeddingDataset& ds) {
  const auto index = id_index(ds);
  std::vector<std::size_t> rows;
  rows.reserve(ids.size());
  for (const auto& id : ids) {
    auto it = index.find(id);
    if (it == index.end()) throw ValidationError("id '" + id + "' is not in the dataset");
    rows.push_back(it->second);
  }
  return rows;
}

std::vector<ClassId> labels_for(std::span<const std::string> ids, const EmbeddingDataset& ds) {
  std::vector<ClassId> out;
  for (auto r : rows_for(ids, ds)) out.push_back(ds.labels[r]);
  return out;
}

std::vector<std::size_t> split_indices(const EmbeddingDataset& ds, const std::string& split) {
  if (split == "all") {
    std::vector<std::size_t> all(ds.size());
    for (std::size_t i = 0; i < all.size(); ++i) all[i] = i;
    return all;
  }
  return ds.indices(parse_split(split));
}

void write_text(const fs::path& path, const std::string& body) {
  std::ofstream os(path, std::ios::trunc | std::ios::binary);
  if (!os) throw IoError("cannot open '" + path.string() + "' for writing");
  os << body;
}

void emit_prediction_files(const fs::path& dir, const PredictionSet& set, const std::vector<ClassId>& labels,
                           const ClassRegistry& registry, const std::optional<std::vector<ClassId>>& truth) {
  write_logits_csv(dir / "logits.csv", set, registry);
  if (truth)
    write_predictions_csv(dir / "predictions.csv", set.ids, labels, registry, std::span<const ClassId>(*truth));
  else
    write_predictions_csv(dir / "predictions.csv", set.ids, labels, registry);
}

std::vector<ClassId> tail_ids(const ClassRegistry& registry, const std::vector<std::string>& names) {
  return resolve_present(registry, names.empty() ? wbc_tail_names() : names);
}

json metrics_json(std::span<const ClassId> truth, std::span<const ClassId> pred, const ClassRegistry& registry,
                  std::span<const ClassId> tail) {
  const auto cm = confusion(truth, pred, registry.size());
  return to_json(evaluate(cm, registry, tail));
}

void print_result(const json& j) { std::cout << j.dump() << std::endl; }

// ---- subcommands ------------------------------------------------------------------

void cmd_gen_synth(Run& run) {
  SyntheticConfig cfg = run.config.get<SyntheticConfig>();
  cfg.seed = run.seed;
  cfg.validate();
  const auto ds = generate_synthetic(cfg);
  save_dataset(ds, run.out / "dataset.json");
  run.write_manifest(cfg);
  print_result({{"dataset", (run.out / "dataset.json").string()}, {"samples", ds.size()}});
}

struct TrainArgs {
  std::string manifest;
};

void cmd_train(Run& run, const TrainArgs& a) {
  const fs::path base = run.config_path.empty() ? fs::current_path() : fs::path(run.config_path).parent_path();
  json cfg_json = run.config;
  if (!a.manifest.empty()) cfg_json["manifest"] = fs::absolute(a.manifest).string();
  RunConfig rc = parse_run_config(cfg_json, base);
  if (rc.manifest.empty()) throw ValidationError("train needs a dataset manifest (--manifest or config \"manifest\")");
  rc.seed = run.seed;
  run.require_input(rc.manifest);
  const auto ds = load_dataset(rc.manifest);
  rc.model.dim = ds.dim;
  rc.model.num_classes = ds.registry.size();

  HeadModel init;
  if (rc.init_checkpoint) {
    init = load_checkpoint(run.require_input(*rc.init_checkpoint));
    if (init.config().dim != ds.dim || init.config().num_classes != ds.registry.size())
      throw ValidationError("initial checkpoint does not match the dataset shape");
  } else {
    init = HeadModel::create(rc.model, rc.seed);
  }

  std::ofstream log(run.out / "train_log.jsonl", std::ios::trunc);
  TrainOptions opts;
  opts.on_epoch = [&](const EpochLog& e) {
    log << to_json(e).dump() << '\n';
    log.flush();
    std::cerr << e.stage << " epoch " << e.epoch << " loss " << text::format_double(e.train_loss) << " val_macro_f1 "
              << text::format_double(e.val_macro_f1) << '\n';
  };
  const auto results = run_multistage(init, ds, rc.stages, rc.seed, opts);

  json stages = json::array();
  for (std::size_t k = 0; k < results.size(); ++k) {
    save_checkpoint(results[k].best, run.out / (rc.stages[k].name + ".hfck"));
    stages.push_back({{"name", rc.stages[k].name}, {"best_epoch", results[k].best_epoch}});
  }
  save_checkpoint(results.back().best, run.out / "model.hfck");

  // Paths stay in "inputs"; the hashed config refers to content only.
  json effective{{"dataset_sha256", dataset_digest(ds)}, {"model", init.config()}, {"stages", rc.stages}};
  if (rc.init_checkpoint) effective["init_checkpoint_sha256"] = sha256_file(*rc.init_checkpoint);
  run.write_manifest(effective);
  print_result({{"checkpoint", (run.out / "model.hfck").string()}, {"stages", stages}});
}

struct RetrainArgs {
  std::string checkpoint;
  std::string manifest;
};

void cmd_retrain(Run& run, const RetrainArgs& a) {
  const StageConfig stage = parse_decoupled_config(run.config);
  const auto ds = load_dataset(run.require_input(a.manifest));
  const HeadModel base = load_checkpoint(run.require_input(a.checkpoint));

  std::ofstream log(run.out / "train_log.jsonl", std::ios::trunc);
  TrainOptions opts;
  opts.on_epoch = [&](const EpochLog& e) {
    log << to_json(e).dump() << '\n';
    log.flush();
  };
  const auto result = decoupled_retrain(base, ds, stage, run.seed, opts);
  save_checkpoint(result.best, run.out / "model.hfck");
  run.write_manifest({{"stage", stage}});
  print_result({{"checkpoint", (run.out / "model.hfck").string()}, {"best_epoch", result.best_epoch}});
}

struct PredictArgs {
  std::string checkpoint;
  std::string manifest;
  std::string split = "test";
  int views = 1;
  double jitter_sigma = 0.0;
};

void cmd_predict(Run& run, const PredictArgs& a) {
  const auto ds = load_dataset(run.require_input(a.manifest));
  const HeadModel model = load_checkpoint(run.require_input(a.checkpoint));
  if (model.config().dim != ds.dim || model.config().num_classes != ds.registry.size())
    throw ValidationError("checkpoint does not match the dataset shape");
  const auto rows = split_indices(ds, a.split);

  PredictionSet set;
  if (a.views <= 1 && a.jitter_sigma == 0.0) {
    set = make_predictions(model, ds, rows, a.checkpoint);
  } else {
    const Matrix features = gather_features(ds, rows);
    std::vector<PredictionSet> per_view;
    for (auto& view : jitter_views(features, a.views, a.jitter_sigma, run.seed)) {
      PredictionSet p;
      for (auto r : rows) p.ids.push_back(ds.ids[r]);
      p.logits = predict_logits(model, view);
      per_view.push_back(std::move(p));
    }
    const std::vector<double> weights(per_view.size(), 1.0);
    set = average_logits(per_view, weights);
  }
  std::vector<ClassId> truth;
  for (auto r : rows) truth.push_back(ds.labels[r]);
  emit_prediction_files(run.out, set, set.top1(), ds.registry, truth);
  run.write_manifest({{"split", a.split}, {"views", a.views}, {"jitter_sigma", a.jitter_sigma}});
  print_result({{"logits", (run.out / "logits.csv").string()}, {"samples", set.size()}});
}

struct AverageArgs {
  std::vector<std::string> inputs;
  std::vector<double> weights;
  std::string manifest;
};

void cmd_tta_average(Run& run, const AverageArgs& a) {
  if (a.inputs.empty()) throw ValidationError("tta-average needs at least one --inputs file");
  std::vector<double> weights = a.weights;
  if (weights.empty()) weights.assign(a.inputs.size(), 1.0);
  if (weights.size() != a.inputs.size()) throw ValidationError("--weights must match --inputs in length");
  const ClassRegistry registry = registry_from_logits(run.require_input(a.inputs.front()));
  std::vector<PredictionSet> sets;
  for (const auto& p : a.inputs) sets.push_back(read_logits_csv(run.require_input(p), registry));
  const PredictionSet avg = average_logits(sets, weights);
  std::optional<std::vector<ClassId>> truth;
  if (!a.manifest.empty()) truth = labels_for(avg.ids, load_dataset(run.require_input(a.manifest)));
  emit_prediction_files(run.out, avg, avg.top1(), registry, truth);
  run.write_manifest({{"weights", weights}});
  print_result({{"logits", (run.out / "logits.csv").string()}, {"samples", avg.size()}});
}

struct EvaluateArgs {
  std::string logits;
  std::string predictions;
  std::string manifest;
  std::vector<std::string> tail;
};

void cmd_evaluate(Run& run, const EvaluateArgs& a) {
  if (a.logits.empty() == a.predictions.empty()) throw ValidationError("evaluate needs exactly one of --logits, --predictions");
  std::optional<EmbeddingDataset> ds;
  if (!a.manifest.empty()) ds = load_dataset(run.require_input(a.manifest));

  ClassRegistry registry;
  std::vector<std::string> ids;
  std::vector<ClassId> pred, truth;
  if (!a.logits.empty()) {
    registry = ds ? ds->registry : registry_from_logits(run.require_input(a.logits));
    const auto set = read_logits_csv(run.require_input(a.logits), registry);
    ids = set.ids;
    pred = set.top1();
  } else {
    if (ds) registry = ds->registry;
    auto table = read_predictions_csv(run.require_input(a.predictions), registry);
    ids = std::move(table.ids);
    pred = std::move(table.predicted);
    truth = std::move(table.truth);
  }
  if (ds) truth = labels_for(ids, *ds);
  if (truth.empty()) throw ValidationError("no ground truth: pass --manifest or a predictions file with a 'true' column");

  const auto tail = tail_ids(registry, a.tail);
  const auto cm = confusion(truth, pred, registry.size());
  json report = to_json(evaluate(cm, registry, tail));
  report["samples"] = truth.size();
  Run::write_json(run.out / "report.json", report);

  std::ostringstream csv;
  write_confusion_csv(csv, cm, registry);
  write_text(run.out / "confusion.csv", csv.str());

  json boundaries = json::array();
  for (auto [x, y] : default_boundary_pairs(registry)) boundaries.push_back(to_json(boundary_report(truth, pred, x, y), registry));
  Run::write_json(run.out / "boundary.json", boundaries);

  run.write_manifest({{"tail_set", report["tail_set"]}});
  print_result({{"macro_f1", report["macro_f1"]}, {"tail_macro_f1", report["tail_macro_f1"]},
                {"tail_composite", report["tail_composite"]}});
}

struct PairArgs {
  std::string primary;
  std::string advisor1;
  std::string advisor2;
  std::string manifest;
  double min_delta = 0.0;
  long min_support = 1;
};

void cmd_discover_pairs(Run& run, const PairArgs& a) {
  const auto ds = load_dataset(run.require_input(a.manifest));
  const auto& registry = ds.registry;
  const auto primary = read_logits_csv(run.require_input(a.primary), registry);
  const auto adv1 = read_logits_csv(run.require_input(a.advisor1), registry);
  const auto adv2 = read_logits_csv(run.require_input(a.advisor2), registry);
  const auto truth = labels_for(primary.ids, ds);
  const DiscoveryOptions opts{a.min_delta, a.min_support};
  const PairSet pairs = discover_pairs(primary, adv1, adv2, truth, opts);
  Run::write_json(run.out / "pairs.json", to_json(pairs, registry));
  run.write_manifest({{"min_delta", a.min_delta}, {"min_support", a.min_support}});
  print_result({{"pairs", to_json(pairs, registry)}});
}

struct EnsembleArgs {
  std::string primary;
  std::string advisor1;
  std::string advisor2;
  std::string pairs;
  std::string manifest;
  std::vector<std::string> tail;
};

void cmd_ensemble(Run& run, const EnsembleArgs& a) {
  std::optional<EmbeddingDataset> ds;
  if (!a.manifest.empty()) ds = load_dataset(run.require_input(a.manifest));
  const ClassRegistry registry = ds ? ds->registry : registry_from_logits(run.require_input(a.primary));
  const auto primary = read_logits_csv(run.require_input(a.primary), registry);
  const auto adv1 = read_logits_csv(run.require_input(a.advisor1), registry);
  const auto adv2 = read_logits_csv(run.require_input(a.advisor2), registry);
  const PairSet pairs = a.pairs == "default" ? default_pairs(registry)
                                           : pairs_from_json(read_json_file(run.require_input(a.pairs)), registry);
  const auto result = head_diverse_pipeline(primary, adv1, adv2, pairs);

  std::optional<std::vector<ClassId>> truth;
  if (ds) truth = labels_for(result.final.ids, *ds);
  emit_prediction_files(run.out, result.final, result.labels, registry, truth);
  write_override_log(run.out / "overrides.jsonl", result.log, registry);

  json report{{"pairs", to_json(pairs, registry)},
              {"overrides", result.log.records.size()},
              {"total", result.log.total},
              {"override_rate", result.override_rate}};
  if (truth) {
    const auto tail = tail_ids(registry, a.tail);
    report["primary_metrics"] = metrics_json(*truth, primary.top1(), registry, tail);
    report["final_metrics"] = metrics_json(*truth, result.labels, registry, tail);
  }
  Run::write_json(run.out / "ensemble_report.json", report);
  run.write_manifest({{"pairs", to_json(pairs, registry)}});
  print_result({{"overrides", result.log.records.size()}, {"override_rate", result.override_rate}});
}

struct AuditArgs {
  std::string logits;
  std::string manifest;
  std::string image_refs;
  std::size_t per_class = 10;
  std::vector<std::string> cases;
  std::string verdicts;
};

std::vector<std::string> read_image_refs(const fs::path& path, std::span<const std::string> ids) {
  std::ifstream is(path);
  if (!is) throw IoError("cannot open '" + path.string() + "'");
  std::unordered_map<std::string, std::string> refs;
  std::string line;
  bool header = true;
  while (std::getline(is, line)) {
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    const auto fields = text::split_csv(line);
    if (fields.size() != 2) throw IoError("'" + path.string() + "': expected id,ref rows");
    if (header && fields[0] == "id") {
      header = false;
      continue;
    }
    header = false;
    refs[fields[0]] = fields[1];
  }
  std::vector<std::string> out;
  for (const auto& id : ids) {
    auto it = refs.find(id);
    out.push_back(it == refs.end() ? std::string() : it->second);
  }
  return out;
}

struct AuditInputs {
  EmbeddingDataset ds;
  PredictionSet preds;
  std::vector<ClassId> labels;
  std::vector<Split> splits;
  std::vector<std::string> refs;
};

AuditInputs load_audit_inputs(Run& run, const AuditArgs& a) {
  if (a.logits.empty() || a.manifest.empty()) throw ValidationError("audit extract/sample need --logits and --manifest");
  AuditInputs in;
  in.ds = load_dataset(run.require_input(a.manifest));
  in.preds = read_logits_csv(run.require_input(a.logits), in.ds.registry);
  for (auto r : rows_for(in.preds.ids, in.ds)) {
    in.labels.push_back(in.ds.labels[r]);
    in.splits.push_back(in.ds.splits[r]);
  }
  if (!a.image_refs.empty()) in.refs = read_image_refs(run.require_input(a.image_refs), in.preds.ids);
  return in;
}

ClassRegistry audit_registry(Run& run, const AuditArgs& a) {
  return a.manifest.empty() ? ClassRegistry() : load_dataset(run.require_input(a.manifest)).registry;
}

std::vector<AuditCase> load_cases(Run& run, const AuditArgs& a, const ClassRegistry& registry) {
  if (a.cases.empty()) throw ValidationError("need at least one --cases file");
  std::vector<AuditCase> all;
  for (const auto& p : a.cases) {
    auto cs = read_cases(run.require_input(p), registry);
    all.insert(all.end(), std::make_move_iterator(cs.begin()), std::make_move_iterator(cs.end()));
  }
  return all;
}

std::optional<fs::path> existing_log(Run& run, const std::string& path) {
  if (path.empty()) return std::nullopt;
  if (fs::exists(path)) run.require_input(path);
  return fs::path(path);
}

void cmd_audit_extract(Run& run, const AuditArgs& a) {
  const auto in = load_audit_inputs(run, a);
  const auto cases = build_cases(in.preds, in.labels, in.refs, in.splits);
  write_cases(run.out / "cases.json", cases, in.ds.registry);
  run.write_manifest(json::object());
  print_result({{"cases", cases.size()}, {"samples", in.preds.size()}});
}

void cmd_audit_sample(Run& run, const AuditArgs& a) {
  const auto in = load_audit_inputs(run, a);
  const auto cases = sample_agreement_cases(in.preds, in.labels, in.refs, in.splits, a.per_class, run.seed);
  write_cases(run.out / "cases.json", cases, in.ds.registry);
  run.write_manifest({{"per_class", a.per_class}});
  print_result({{"cases", cases.size()}});
}

void cmd_audit_summarize(Run& run, const AuditArgs& a, bool heatmap) {
  const ClassRegistry registry = audit_registry(run, a);
  auto cases = load_cases(run, a, registry);
  std::optional<fs::path> log;
  if (!a.verdicts.empty() && fs::exists(a.verdicts)) log = existing_log(run, a.verdicts);
  VerdictStore store(std::move(cases), log, registry);
  if (heatmap) {
    const auto m = directional_matrix(store, store.cases(), registry.size());
    Run::write_json(run.out / "heatmap.json", to_json(m, registry));
  } else {
    Run::write_json(run.out / "summary.json", to_json(summarize(store), registry));
  }
  run.write_manifest(json::object());
  print_result({{"reviewed", store.reviewed_count()}, {"total", store.cases().size()}});
}

struct ServeArgs {
  std::string images_root;
  std::string host = "127.0.0.1";
  int port = 8080;
};

void cmd_serve(Run& run, const AuditArgs& a, const ServeArgs& s) {
  if (a.verdicts.empty()) throw ValidationError("serve needs --verdicts");
  const ClassRegistry registry = audit_registry(run, a);
  auto cases = load_cases(run, a, registry);
  VerdictStore store(std::move(cases), fs::path(a.verdicts), registry);
  ReviewService service(store);
  std::optional<fs::path> images;
  if (!s.images_root.empty()) images = s.images_root;
  auto server = make_http_server(service, images);
  run.write_manifest({{"host", s.host}, {"port", s.port}});
  std::cout << json{{"listening", s.host + ":" + std::to_string(s.port)}}.dump() << std::endl;
  if (!server->listen(s.host, s.port)) throw IoError("cannot listen on " + s.host + ":" + std::to_string(s.port));
}

void report_error(std::string_view kind, std::string_view message, int code) {
  std::cerr << json{{"error", kind}, {"message", message}, {"exit_code", code}}.dump() << std::endl;
}

}  // namespace

int run_cli(int argc, const char* const* argv) {
  CLI::App app{"Classification-head benchmark for frozen embeddings"};
  app.require_subcommand(1);
  Run run;
  for (int i = 1; i < argc; ++i) run.args.emplace_back(argv[i]);

  auto common = [&run](CLI::App* sub, bool needs_out = true) {
    auto* out = sub->add_option("--out", run.out_arg, "Output directory (relative paths honour HEADBENCH_OUT_ROOT)");
    if (needs_out) out->required();
    run.seed_options.push_back(sub->add_option("--seed", run.seed, "Random seed"));
    sub->add_option("--config", run.config_path, "JSON configuration file");
    return sub;
  };

  auto* gen = common(app.add_subcommand("gen-synth", "Generate a synthetic long-tailed embedding dataset"));

  TrainArgs train_args;
  auto* train = common(app.add_subcommand("train", "Multistage training of one head family"));
  train->add_option("--manifest", train_args.manifest, "Dataset manifest (overrides the config)");

  RetrainArgs retrain_args;
  auto* retrain = common(app.add_subcommand("retrain-decoupled", "Class-balanced head retraining on a frozen backbone"));
  retrain->add_option("--checkpoint", retrain_args.checkpoint)->required();
  retrain->add_option("--manifest", retrain_args.manifest)->required();

  PredictArgs predict_args;
  auto* predict = common(app.add_subcommand("predict", "Emit logits for one split"));
  predict->add_option("--checkpoint", predict_args.checkpoint)->required();
  predict->add_option("--manifest", predict_args.manifest)->required();
  predict->add_option("--split", predict_args.split)->check(CLI::IsMember({"train", "val", "test", "all"}));
  predict->add_option("--views", predict_args.views, "Feature-jitter views to average");
  predict->add_option("--jitter-sigma", predict_args.jitter_sigma);

  AverageArgs average_args;
  auto* average = common(app.add_subcommand("tta-average", "Weighted average of logits files"));
  average->add_option("--inputs", average_args.inputs)->required();
  average->add_option("--weights", average_args.weights);
  average->add_option("--manifest", average_args.manifest);

  EvaluateArgs evaluate_args;
  auto* evaluate_cmd = common(app.add_subcommand("evaluate", "Metric report, confusion matrix and boundary report"));
  evaluate_cmd->add_option("--logits", evaluate_args.logits);
  evaluate_cmd->add_option("--predictions", evaluate_args.predictions);
  evaluate_cmd->add_option("--manifest", evaluate_args.manifest);
  evaluate_cmd->add_option("--tail", evaluate_args.tail, "Tail class names");

  PairArgs pair_args;
  auto* discover = common(app.add_subcommand("discover-pairs", "Score override pairs on labelled predictions"));
  discover->add_option("--primary", pair_args.primary)->required();
  discover->add_option("--advisor1", pair_args.advisor1)->required();
  discover->add_option("--advisor2", pair_args.advisor2)->required();
  discover->add_option("--manifest", pair_args.manifest)->required();
  discover->add_option("--min-delta", pair_args.min_delta);
  discover->add_option("--min-support", pair_args.min_support);

  EnsembleArgs ensemble_args;
  auto* ensemble = common(app.add_subcommand("ensemble", "Gated pairwise override of the primary predictions"));
  ensemble->add_option("--primary", ensemble_args.primary)->required();
  ensemble->add_option("--advisor1", ensemble_args.advisor1)->required();
  ensemble->add_option("--advisor2", ensemble_args.advisor2)->required();
  ensemble->add_option("--pairs", ensemble_args.pairs, "pairs.json, or 'default' for the fixed pair set")->required();
  ensemble->add_option("--manifest", ensemble_args.manifest);
  ensemble->add_option("--tail", ensemble_args.tail);

  AuditArgs audit_args;
  auto* audit = app.add_subcommand("audit", "Label-noise audit");
  audit->require_subcommand(1);
  auto* extract = common(audit->add_subcommand("extract", "Discordant cases sorted by margin"));
  auto* sample = common(audit->add_subcommand("sample", "Stratified agreement sample"));
  auto* summarize_cmd = common(audit->add_subcommand("summarize", "Verdict summary per split"));
  auto* heatmap_cmd = common(audit->add_subcommand("heatmap", "Directional label-error matrix"));
  for (auto* sub : {extract, sample}) {
    sub->add_option("--logits", audit_args.logits)->required();
    sub->add_option("--manifest", audit_args.manifest)->required();
    sub->add_option("--image-refs", audit_args.image_refs, "CSV of id,ref");
  }
  sample->add_option("--per-class", audit_args.per_class);
  for (auto* sub : {summarize_cmd, heatmap_cmd}) {
    sub->add_option("--cases", audit_args.cases)->required();
    sub->add_option("--verdicts", audit_args.verdicts);
    sub->add_option("--manifest", audit_args.manifest, "Dataset manifest supplying the class registry");
  }

  ServeArgs serve_args;
  auto* serve = common(app.add_subcommand("serve", "HTTP service for expert review"), false);
  serve->add_option("--cases", audit_args.cases)->required();
  serve->add_option("--verdicts", audit_args.verdicts)->required();
  serve->add_option("--manifest", audit_args.manifest);
  serve->add_option("--images-root", serve_args.images_root);
  serve->add_option("--host", serve_args.host);
  serve->add_option("--port", serve_args.port);

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    report_error("usage", e.what(), 2);
    return 2;
  }

  try {
    run.load_config();
    run.effective_seed();
    auto parsed = [](CLI::App* sub) { return sub->parsed(); };
    if (parsed(serve)) {
      run.command = "serve";
      if (run.out_arg.empty()) run.out_arg = ".";
    }
    for (auto [sub, name] : std::initializer_list<std::pair<CLI::App*, const char*>>{
             {gen, "gen-synth"}, {train, "train"}, {retrain, "retrain-decoupled"}, {predict, "predict"},
             {average, "tta-average"}, {evaluate_cmd, "evaluate"}, {discover, "discover-pairs"},
             {ensemble, "ensemble"}, {extract, "audit extract"}, {sample, "audit sample"},
             {summarize_cmd, "audit summarize"}, {heatmap_cmd, "audit heatmap"}})
      if (parsed(sub)) run.command = name;
    run.prepare_out();

    if (parsed(gen)) cmd_gen_synth(run);
    else if (parsed(train)) cmd_train(run, train_args);
    else if (parsed(retrain)) cmd_retrain(run, retrain_args);
    else if (parsed(predict)) cmd_predict(run, predict_args);
    else if (parsed(average)) cmd_tta_average(run, average_args);
    else if (parsed(evaluate_cmd)) cmd_evaluate(run, evaluate_args);
    else if (parsed(discover)) cmd_discover_pairs(run, pair_args);
    else if (parsed(ensemble)) cmd_ensemble(run, ensemble_args);
    else if (parsed(extract)) cmd_audit_extract(run, audit_args);
    else if (parsed(sample)) cmd_audit_sample(run, audit_args);
    else if (parsed(summarize_cmd)) cmd_audit_summarize(run, audit_args, false);
    else if (parsed(heatmap_cmd)) cmd_audit_summarize(run, audit_args, true);
    else if (parsed(serve)) cmd_serve(run, audit_args, serve_args);
    return 0;
  } catch (const ValidationError& e) {
    report_error("validation", e.what(), 3);
    return 3;
  } catch (const nlohmann::json::exception& e) {
    report_error("validation", e.what(), 3);
    return 3;
  } catch (const std::exception& e) {
    report_error("runtime", e.what(), 1);
    return 1;
  }
}

}  // namespace headbench
