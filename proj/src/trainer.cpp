#include "headbench/trainer.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>

#include "headbench/error.hpp"
#include "headbench/metrics.hpp"

namespace headbench {

using nlohmann::json;

bool FreezeMask::frozen(ParamGroup group) const {
  switch (group) {
    case ParamGroup::trunk: return trunk;
    case ParamGroup::stem: return stem;
    case ParamGroup::head: return head;
  }
  return false;
}

void StageConfig::validate() const {
  if (epochs < 1) throw ValidationError("stage " + name + ": epochs must be >= 1");
  if (!(lr_head >= 0.0) || !(lr_trunk >= 0.0)) throw ValidationError("stage " + name + ": learning rates must be >= 0");
  if (warmup_epochs < 0 || warmup_epochs > epochs)
    throw ValidationError("stage " + name + ": warmup_epochs must lie in [0, epochs]");
  if (batch_size < 1) throw ValidationError("stage " + name + ": batch_size must be >= 1");
  if (grad_accum_steps < 1) throw ValidationError("stage " + name + ": grad_accum_steps must be >= 1");
}

namespace {

std::string sampler_name(SamplerKind k) { return k == SamplerKind::balanced ? "balanced" : "sequential_shuffled"; }

SamplerKind parse_sampler(const std::string& s) {
  if (s == "balanced") return SamplerKind::balanced;
  if (s == "sequential_shuffled") return SamplerKind::sequential_shuffled;
  throw ValidationError("unknown sampler '" + s + "'");
}

}  // namespace

void to_json(json& j, const StageConfig& c) {
  j = json{{"name", c.name},
           {"epochs", c.epochs},
           {"lr_head", c.lr_head},
           {"lr_trunk", c.lr_trunk},
           {"warmup_epochs", c.warmup_epochs},
           {"batch_size", c.batch_size},
           {"grad_accum_steps", c.grad_accum_steps},
           {"loss", c.loss},
           {"sampler", sampler_name(c.sampler)},
           {"freeze", {{"trunk", c.freeze.trunk}, {"stem", c.freeze.stem}, {"head", c.freeze.head}}},
           {"adamw",
            {{"beta1", c.adamw.beta1},
             {"beta2", c.adamw.beta2},
             {"eps", c.adamw.eps},
             {"weight_decay", c.adamw.weight_decay}}}};
}

void from_json(const json& j, StageConfig& c) {
  c = StageConfig{};
  if (j.contains("name")) j.at("name").get_to(c.name);
  if (j.contains("epochs")) j.at("epochs").get_to(c.epochs);
  if (j.contains("lr_head")) j.at("lr_head").get_to(c.lr_head);
  if (j.contains("lr_trunk")) j.at("lr_trunk").get_to(c.lr_trunk);
  if (j.contains("warmup_epochs")) j.at("warmup_epochs").get_to(c.warmup_epochs);
  if (j.contains("batch_size")) j.at("batch_size").get_to(c.batch_size);
  if (j.contains("grad_accum_steps")) j.at("grad_accum_steps").get_to(c.grad_accum_steps);
  if (j.contains("loss")) j.at("loss").get_to(c.loss);
  if (j.contains("sampler")) c.sampler = parse_sampler(j.at("sampler").get<std::string>());
  if (j.contains("freeze")) {
    const auto& f = j.at("freeze");
    c.freeze.trunk = f.value("trunk", false);
    c.freeze.stem = f.value("stem", false);
    c.freeze.head = f.value("head", false);
  }
  if (j.contains("adamw")) {
    const auto& a = j.at("adamw");
    c.adamw.beta1 = a.value("beta1", c.adamw.beta1);
    c.adamw.beta2 = a.value("beta2", c.adamw.beta2);
    c.adamw.eps = a.value("eps", c.adamw.eps);
    c.adamw.weight_decay = a.value("weight_decay", c.adamw.weight_decay);
  }
}

std::vector<StageConfig> default_schedule(double lr_scale, std::size_t batch_size) {
  struct Row {
    const char* name;
    int epochs;
    double head, trunk;
    int warmup;
  };
  static constexpr Row rows[] = {{"S1", 11, 2.5e-5, 5.0e-6, 2}, {"S2", 5, 1.0e-5, 2.0e-6, 0}, {"S3", 5, 5.0e-6, 1.0e-6, 0}};
  std::vector<StageConfig> out;
  for (const auto& r : rows) {
    StageConfig s;
    s.name = r.name;
    s.epochs = r.epochs;
    s.lr_head = r.head * lr_scale;
    s.lr_trunk = r.trunk * lr_scale;
    s.warmup_epochs = r.warmup;
    s.batch_size = batch_size;
    out.push_back(s);
  }
  return out;
}

StageConfig decoupled_stage(double lr_scale, std::size_t batch_size) {
  StageConfig s;
  s.name = "decoupled";
  s.epochs = 5;
  s.lr_head = 1.0e-5 * lr_scale;
  s.lr_trunk = 0.0;
  s.warmup_epochs = 0;
  s.batch_size = batch_size;
  s.loss = LossConfig::decoupled();
  s.sampler = SamplerKind::balanced;
  s.freeze.trunk = true;
  s.freeze.stem = true;
  return s;
}

OptimizerState OptimizerState::for_model(const HeadModel& model, const AdamWConfig& hyper) {
  OptimizerState s;
  s.hyper = hyper;
  for (const auto& p : model.params()) {
    s.m.emplace_back(p.values.size(), 0.0);
    s.v.emplace_back(p.values.size(), 0.0);
  }
  return s;
}

void adamw_update(std::span<double> param, std::span<const double> grad, std::span<double> m, std::span<double> v,
                  long t, double lr, bool apply_decay, const AdamWConfig& hyper) {
  const double bc1 = 1.0 - std::pow(hyper.beta1, static_cast<double>(t));
  const double bc2 = 1.0 - std::pow(hyper.beta2, static_cast<double>(t));
  for (std::size_t i = 0; i < param.size(); ++i) {
    if (apply_decay && hyper.weight_decay != 0.0) param[i] -= lr * hyper.weight_decay * param[i];
    m[i] = hyper.beta1 * m[i] + (1.0 - hyper.beta1) * grad[i];
    v[i] = hyper.beta2 * v[i] + (1.0 - hyper.beta2) * grad[i] * grad[i];
    const double m_hat = m[i] / bc1;
    const double v_hat = v[i] / bc2;
    param[i] -= lr * m_hat / (std::sqrt(v_hat) + hyper.eps);
  }
}

void adamw_step(HeadModel& model, const Gradients& grads, OptimizerState& state, double lr_head, double lr_trunk,
                const FreezeMask& freeze) {
  auto& params = model.params();
  if (grads.values.size() != params.size() || state.m.size() != params.size())
    throw ValidationError("gradient/optimizer state does not match the model's parameters");
  for (std::size_t p = 0; p < params.size(); ++p) {
    if (grads.values[p].size() != params[p].values.size())
      throw ValidationError("gradient shape mismatch for " + params[p].name);
    for (double g : grads.values[p])
      if (!std::isfinite(g)) throw NumericError(params[p].name, "optimizer step aborted");
  }
  ++state.step;
  for (std::size_t p = 0; p < params.size(); ++p) {
    auto& t = params[p];
    if (freeze.frozen(t.group)) continue;
    const double lr = t.group == ParamGroup::trunk ? lr_trunk : lr_head;
    adamw_update(t.values, grads.values[p], state.m[p], state.v[p], state.step, lr, t.decay, state.hyper);
  }
}

LearningRates lr_at(const StageConfig& stage, long step, long steps_per_epoch) {
  const long warmup_steps = static_cast<long>(stage.warmup_epochs) * steps_per_epoch;
  double factor = 1.0;
  if (warmup_steps > 0 && step < warmup_steps) factor = static_cast<double>(step) / static_cast<double>(warmup_steps);
  return {stage.lr_head * factor, stage.lr_trunk * factor};
}

json to_json(const EpochLog& log) {
  return json{{"stage", log.stage},
              {"epoch", log.epoch},
              {"train_loss", log.train_loss},
              {"val_macro_f1", log.val_macro_f1},
              {"val_tail_macro_f1", log.val_tail_macro_f1},
              {"val_tail_composite", log.val_tail_composite},
              {"lr_head", log.lr_head},
              {"lr_trunk", log.lr_trunk}};
}

Matrix gather_features(const EmbeddingDataset& dataset, std::span<const std::size_t> indices) {
  Matrix out(indices.size(), dataset.dim);
  for (std::size_t r = 0; r < indices.size(); ++r) {
    const auto src = dataset.row(indices[r]);
    std::copy(src.begin(), src.end(), out.row(r).begin());
  }
  return out;
}

std::vector<ClassId> argmax_rows(const Matrix& logits) {
  std::vector<ClassId> out(logits.rows);
  for (std::size_t i = 0; i < logits.rows; ++i) {
    const auto row = logits.row(i);
    out[i] = static_cast<ClassId>(std::max_element(row.begin(), row.end()) - row.begin());
  }
  return out;
}

namespace {

bool needs_dropout(const ModelConfig& c) {
  return c.stem_dropout > 0.0 || (c.family == HeadFamily::mlp && c.hidden_dropout > 0.0);
}

}  // namespace

StageResult train_stage(const HeadModel& init, const EmbeddingDataset& dataset, const StageConfig& stage,
                        std::uint64_t seed, const TrainOptions& options) {
  stage.validate();
  const auto& mc = init.config();
  if (mc.dim != dataset.dim || static_cast<int>(mc.num_classes) != dataset.registry.size())
    throw ValidationError("model dimensions do not match the dataset");
  const auto train_idx = dataset.indices(Split::train);
  const auto val_idx = dataset.indices(Split::val);
  if (train_idx.empty()) throw ValidationError("train split is empty");
  if (val_idx.empty()) throw ValidationError("val split is empty");

  const int C = dataset.registry.size();
  const LossSpec loss = resolve_loss(stage.loss, class_counts(dataset, Split::train));
  std::vector<ClassId> tail = options.tail_set;
  if (tail.empty()) tail = resolve_present(dataset.registry, wbc_tail_names());
  if (tail.empty())
    for (ClassId c = 0; c < C; ++c) tail.push_back(c);

  std::vector<ClassId> train_labels(train_idx.size());
  for (std::size_t i = 0; i < train_idx.size(); ++i) train_labels[i] = dataset.labels[train_idx[i]];
  std::vector<ClassId> val_labels(val_idx.size());
  for (std::size_t i = 0; i < val_idx.size(); ++i) val_labels[i] = dataset.labels[val_idx[i]];
  const Matrix val_features = gather_features(dataset, val_idx);

  const std::size_t n = train_idx.size();
  const std::size_t per_step = stage.batch_size * static_cast<std::size_t>(stage.grad_accum_steps);
  const long steps_per_epoch = static_cast<long>((n + per_step - 1) / per_step);
  const bool dropout_on = needs_dropout(mc);

  std::mt19937_64 rng(seed);
  HeadModel model = init;
  OptimizerState state = OptimizerState::for_model(model, stage.adamw);
  StageResult result;
  double best_macro = -1.0;
  long step = 0;
  LearningRates lr{};

  for (int epoch = 1; epoch <= stage.epochs; ++epoch) {
    std::vector<std::size_t> order;
    if (stage.sampler == SamplerKind::balanced) {
      for (std::size_t pos : balanced_sampler(train_labels, n, rng())) order.push_back(train_idx[pos]);
    } else {
      order = train_idx;
      std::shuffle(order.begin(), order.end(), rng);
    }

    double loss_sum = 0.0;
    for (std::size_t start = 0; start < n; start += per_step) {
      Gradients grads = Gradients::zeros_like(model);
      std::size_t in_step = 0;
      for (int a = 0; a < stage.grad_accum_steps; ++a) {
        const std::size_t lo = start + static_cast<std::size_t>(a) * stage.batch_size;
        if (lo >= n) break;
        const std::size_t hi = std::min(n, lo + stage.batch_size);
        const std::span<const std::size_t> batch(order.data() + lo, hi - lo);
        Matrix features = gather_features(dataset, batch);
        std::vector<ClassId> labels(batch.size());
        for (std::size_t i = 0; i < batch.size(); ++i) labels[i] = dataset.labels[batch[i]];
        Matrix targets = smooth_targets(labels, stage.loss.smoothing, C);
        if (stage.loss.mixup_prob > 0.0) {
          auto mixed = mixup(std::move(features), std::move(targets), stage.loss.mixup_prob, stage.loss.mixup_beta, rng);
          features = std::move(mixed.features);
          targets = std::move(mixed.targets);
        }
        std::vector<DropoutMask> masks;
        if (dropout_on) {
          masks.reserve(batch.size());
          for (std::size_t i = 0; i < batch.size(); ++i) masks.push_back(sample_dropout_mask(model, rng));
        }
        loss_sum += accumulate_gradients(model, features, targets, loss, masks, grads);
        in_step += batch.size();
      }
      grads.scale(1.0 / static_cast<double>(in_step));
      lr = lr_at(stage, step, steps_per_epoch);
      adamw_step(model, grads, state, lr.head, lr.trunk, stage.freeze);
      ++step;
    }

    const auto predicted = argmax_rows(predict_logits(model, val_features));
    const auto cm = confusion(val_labels, predicted, C);
    EpochLog entry;
    entry.stage = stage.name;
    entry.epoch = epoch;
    entry.train_loss = loss_sum / static_cast<double>(n);
    entry.val_macro_f1 = macro_f1(cm);
    entry.val_tail_macro_f1 = tail_macro_f1(cm, tail);
    entry.val_tail_composite = tail_composite(entry.val_macro_f1, entry.val_tail_macro_f1);
    entry.lr_head = lr.head;
    entry.lr_trunk = lr.trunk;
    result.log.push_back(entry);
    if (options.on_epoch) options.on_epoch(entry);

    if (entry.val_macro_f1 > best_macro) {
      best_macro = entry.val_macro_f1;
      result.best = model;
      result.best_epoch = epoch;
    }
  }
  result.best.stage_tag = stage.name;
  return result;
}

std::vector<StageResult> run_multistage(const HeadModel& init, const EmbeddingDataset& dataset,
                                        const std::vector<StageConfig>& stages, std::uint64_t seed,
                                        const TrainOptions& options) {
  if (stages.empty()) throw ValidationError("multistage training needs at least one stage");
  std::vector<StageResult> results;
  results.reserve(stages.size());
  const HeadModel* start = &init;
  for (std::size_t k = 0; k < stages.size(); ++k) {
    results.push_back(train_stage(*start, dataset, stages[k], seed + k, options));
    start = &results.back().best;
  }
  return results;
}

StageResult decoupled_retrain(const HeadModel& checkpoint, const EmbeddingDataset& dataset, const StageConfig& stage,
                              std::uint64_t seed, const TrainOptions& options) {
  if (checkpoint.config().family != HeadFamily::mlp)
    throw ValidationError("decoupled retraining expects an mlp checkpoint, got " +
                          std::string(to_string(checkpoint.config().family)));
  return train_stage(checkpoint, dataset, stage, seed, options);
}

}  // namespace headbench
