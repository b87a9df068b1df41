#include "headbench/objective.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "headbench/error.hpp"

namespace headbench {

using nlohmann::json;

LossConfig LossConfig::decoupled() {
  LossConfig c;
  c.kind = LossKind::weighted_ce;
  c.gamma = 0.0;
  c.smoothing = 0.0;
  c.mixup_prob = 0.0;
  return c;
}

void LossConfig::validate(int num_classes) const {
  if (!(gamma >= 0.0) || !std::isfinite(gamma)) throw ValidationError("loss gamma must be finite and >= 0");
  if (!(smoothing >= 0.0 && smoothing < 1.0)) throw ValidationError("label smoothing must lie in [0, 1)");
  if (!(mixup_prob >= 0.0 && mixup_prob <= 1.0)) throw ValidationError("mixup_prob must lie in [0, 1]");
  if (!(mixup_beta > 0.0)) throw ValidationError("mixup_beta must be > 0");
  if (!(effective_beta >= 0.0 && effective_beta < 1.0)) throw ValidationError("effective_beta must lie in [0, 1)");
  if (!alpha.empty()) {
    if (static_cast<int>(alpha.size()) != num_classes) throw ValidationError("alpha must have one entry per class");
    for (double a : alpha)
      if (!(a > 0.0) || !std::isfinite(a)) throw ValidationError("alpha entries must be finite and positive");
  }
}

void to_json(json& j, const LossConfig& c) {
  j = json{{"kind", c.kind == LossKind::focal ? "focal" : "weighted_ce"},
           {"gamma", c.gamma},
           {"smoothing", c.smoothing},
           {"alpha", c.alpha},
           {"mixup_prob", c.mixup_prob},
           {"mixup_beta", c.mixup_beta},
           {"effective_beta", c.effective_beta}};
}

void from_json(const json& j, LossConfig& c) {
  c = LossConfig{};
  if (j.contains("kind")) {
    const auto kind = j.at("kind").get<std::string>();
    if (kind == "focal") c.kind = LossKind::focal;
    else if (kind == "weighted_ce") c = LossConfig::decoupled();
    else throw ValidationError("unknown loss kind '" + kind + "'");
  }
  if (j.contains("gamma")) j.at("gamma").get_to(c.gamma);
  if (j.contains("smoothing")) j.at("smoothing").get_to(c.smoothing);
  if (j.contains("alpha")) j.at("alpha").get_to(c.alpha);
  if (j.contains("mixup_prob")) j.at("mixup_prob").get_to(c.mixup_prob);
  if (j.contains("mixup_beta")) j.at("mixup_beta").get_to(c.mixup_beta);
  if (j.contains("effective_beta")) j.at("effective_beta").get_to(c.effective_beta);
}

namespace {

// Fills zero-count classes with the largest raw weight, then rescales to mean 1.
std::vector<double> finish_weights(const CountVector& counts, std::vector<double> raw) {
  double max_raw = 0.0;
  bool any = false;
  for (std::size_t c = 0; c < raw.size(); ++c)
    if (counts.counts[c] > 0) {
      max_raw = any ? std::max(max_raw, raw[c]) : raw[c];
      any = true;
    }
  if (!any) throw ValidationError("class weights need at least one class with a nonzero count");
  for (std::size_t c = 0; c < raw.size(); ++c)
    if (counts.counts[c] <= 0) raw[c] = max_raw;
  const double sum = std::accumulate(raw.begin(), raw.end(), 0.0);
  const double scale = static_cast<double>(raw.size()) / sum;
  for (auto& w : raw) w *= scale;
  return raw;
}

}  // namespace

std::vector<double> focal_alpha(const CountVector& counts) {
  std::vector<double> raw(counts.counts.size(), 0.0);
  for (std::size_t c = 0; c < raw.size(); ++c)
    if (counts.counts[c] > 0) raw[c] = 1.0 / std::sqrt(static_cast<double>(counts.counts[c]));
  return finish_weights(counts, std::move(raw));
}

std::vector<double> effective_number_weights(const CountVector& counts, double beta) {
  if (!(beta >= 0.0 && beta < 1.0)) throw ValidationError("effective-number beta must lie in [0, 1)");
  std::vector<double> raw(counts.counts.size(), 0.0);
  for (std::size_t c = 0; c < raw.size(); ++c)
    if (counts.counts[c] > 0)
      raw[c] = (1.0 - beta) / (1.0 - std::pow(beta, static_cast<double>(counts.counts[c])));
  return finish_weights(counts, std::move(raw));
}

LossSpec resolve_loss(const LossConfig& config, const CountVector& train_counts) {
  config.validate(static_cast<int>(train_counts.counts.size()));
  LossSpec spec;
  spec.gamma = config.kind == LossKind::focal ? config.gamma : 0.0;
  if (!config.alpha.empty()) spec.alpha = config.alpha;
  else if (config.kind == LossKind::focal) spec.alpha = focal_alpha(train_counts);
  else spec.alpha = effective_number_weights(train_counts, config.effective_beta);
  return spec;
}

std::vector<double> smooth_targets(ClassId label, double epsilon, int num_classes) {
  if (!(epsilon >= 0.0 && epsilon < 1.0)) throw ValidationError("label smoothing must lie in [0, 1)");
  if (label < 0 || label >= num_classes) throw ValidationError("label out of range for smoothing");
  std::vector<double> q(static_cast<std::size_t>(num_classes), epsilon / num_classes);
  q[static_cast<std::size_t>(label)] = (1.0 - epsilon) + epsilon / num_classes;
  return q;
}

Matrix smooth_targets(std::span<const ClassId> labels, double epsilon, int num_classes) {
  Matrix out(labels.size(), static_cast<std::size_t>(num_classes));
  for (std::size_t i = 0; i < labels.size(); ++i) {
    const auto q = smooth_targets(labels[i], epsilon, num_classes);
    std::copy(q.begin(), q.end(), out.row(i).begin());
  }
  return out;
}

double sample_loss(std::span<const double> logits, std::span<const double> target, const LossSpec& spec,
                   std::span<double> dlogits) {
  const std::size_t C = logits.size();
  double max_logit = logits[0];
  for (double y : logits) {
    if (!std::isfinite(y)) throw NumericError("logits", "loss evaluated on non-finite logits");
    max_logit = std::max(max_logit, y);
  }
  double denom = 0.0;
  for (double y : logits) denom += std::exp(y - max_logit);
  const double log_denom = std::log(denom);

  std::vector<double> p(C), log_p(C), g(C, 0.0);
  for (std::size_t k = 0; k < C; ++k) {
    log_p[k] = logits[k] - max_logit - log_denom;
    p[k] = std::exp(log_p[k]);
  }

  const double gamma = spec.gamma;
  double loss = 0.0, g_sum = 0.0;
  for (std::size_t k = 0; k < C; ++k) {
    if (target[k] == 0.0) continue;
    const double weight = spec.alpha.empty() ? 1.0 : spec.alpha[k];
    const double one_minus = 1.0 - p[k];
    const double modulator = gamma == 0.0 ? 1.0 : std::pow(one_minus, gamma);
    loss -= weight * modulator * target[k] * log_p[k];
    if (!dlogits.empty()) {
      double bracket = modulator;
      if (gamma != 0.0 && one_minus > 0.0) bracket -= gamma * std::pow(one_minus, gamma - 1.0) * p[k] * log_p[k];
      g[k] = -weight * target[k] * bracket;
      g_sum += g[k];
    }
  }
  if (!dlogits.empty())
    for (std::size_t j = 0; j < C; ++j) dlogits[j] = g[j] - p[j] * g_sum;
  return loss;
}

namespace {

double batch_mean_loss(const Matrix& logits, const Matrix& targets, const LossSpec& spec) {
  if (logits.rows != targets.rows || logits.cols != targets.cols)
    throw ValidationError("logits and targets must have identical shapes");
  if (!spec.alpha.empty() && spec.alpha.size() != logits.cols)
    throw ValidationError("class weights must have one entry per class");
  if (logits.rows == 0) return 0.0;
  double total = 0.0;
  for (std::size_t i = 0; i < logits.rows; ++i) total += sample_loss(logits.row(i), targets.row(i), spec);
  return total / static_cast<double>(logits.rows);
}

}  // namespace

double focal_loss(const Matrix& logits, const Matrix& targets, std::span<const double> alpha, double gamma) {
  return batch_mean_loss(logits, targets, LossSpec{gamma, {alpha.begin(), alpha.end()}});
}

double weighted_cross_entropy(const Matrix& logits, const Matrix& targets, std::span<const double> weights) {
  return batch_mean_loss(logits, targets, LossSpec{0.0, {weights.begin(), weights.end()}});
}

MixupResult mix_pairs(const Matrix& features, const Matrix& targets, double lambda,
                      const std::vector<std::size_t>& permutation) {
  MixupResult out{features, targets, true, false, lambda, permutation};
  for (std::size_t i = 0; i < features.rows; ++i) {
    const std::size_t j = permutation[i];
    for (std::size_t c = 0; c < features.cols; ++c)
      out.features(i, c) = lambda * features(i, c) + (1.0 - lambda) * features(j, c);
    for (std::size_t c = 0; c < targets.cols; ++c)
      out.targets(i, c) = lambda * targets(i, c) + (1.0 - lambda) * targets(j, c);
  }
  return out;
}

MixupResult mixup(Matrix features, Matrix targets, double prob, double beta, std::mt19937_64& rng) {
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  MixupResult out;
  out.features = std::move(features);
  out.targets = std::move(targets);
  if (!(unit(rng) < prob)) return out;
  if (out.features.rows < 2) {
    out.skipped_small_batch = true;
    return out;
  }
  std::gamma_distribution<double> gamma(beta, 1.0);
  double a = 0.0, b = 0.0;
  while (a + b == 0.0) {
    a = gamma(rng);
    b = gamma(rng);
  }
  const double lambda = a / (a + b);
  std::vector<std::size_t> perm(out.features.rows);
  std::iota(perm.begin(), perm.end(), std::size_t{0});
  std::shuffle(perm.begin(), perm.end(), rng);
  return mix_pairs(out.features, out.targets, lambda, perm);
}

}  // namespace headbench
