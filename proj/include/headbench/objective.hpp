#pragma once

#include <cstdint>
#include <random>
#include <span>
#include <vector>

#include <json.hpp>

#include "headbench/dataset.hpp"
#include "headbench/matrix.hpp"

namespace headbench {

enum class LossKind { focal, weighted_ce };

struct LossConfig {
  LossKind kind = LossKind::focal;
  double gamma = 2.0;
  double smoothing = 0.1;
  std::vector<double> alpha;  // empty: derived from train-split counts
  double mixup_prob = 0.1;
  double mixup_beta = 0.2;
  double effective_beta = 0.999;

  // Plain weighted cross-entropy with effective-number weights, no smoothing or mixup.
  static LossConfig decoupled();
  void validate(int num_classes) const;
};

void to_json(nlohmann::json& j, const LossConfig& c);
void from_json(const nlohmann::json& j, LossConfig& c);

// What a single batch loss evaluation needs: focal exponent and per-class weights.
// Weighted cross-entropy is the gamma = 0 case.
struct LossSpec {
  double gamma = 0.0;
  std::vector<double> alpha;
};

LossSpec resolve_loss(const LossConfig& config, const CountVector& train_counts);

// alpha_c = C * n_c^{-1/2} / sum_j n_j^{-1/2}. Zero-count classes take the largest nonzero-class weight.
std::vector<double> focal_alpha(const CountVector& counts);

// Raw (1 - beta) / (1 - beta^{n_c}), mean-1 normalized. Zero-count classes as in focal_alpha.
std::vector<double> effective_number_weights(const CountVector& counts, double beta);

std::vector<double> smooth_targets(ClassId label, double epsilon, int num_classes);
Matrix smooth_targets(std::span<const ClassId> labels, double epsilon, int num_classes);

// -sum_k alpha_k (1 - p_k)^gamma q_k log p_k for one sample. When `dlogits` is non-empty it
// receives the gradient with respect to the logits.
double sample_loss(std::span<const double> logits, std::span<const double> target, const LossSpec& spec,
                   std::span<double> dlogits = {});

double focal_loss(const Matrix& logits, const Matrix& targets, std::span<const double> alpha, double gamma);
double weighted_cross_entropy(const Matrix& logits, const Matrix& targets, std::span<const double> weights);

struct MixupResult {
  Matrix features;
  Matrix targets;
  bool applied = false;
  bool skipped_small_batch = false;  // triggered on a batch with fewer than two rows
  double lambda = 1.0;
  std::vector<std::size_t> permutation;
};

// Batch-level MixUp: with probability `prob`, lambda ~ Beta(beta, beta) and a random pairing.
MixupResult mixup(Matrix features, Matrix targets, double prob, double beta, std::mt19937_64& rng);

// Deterministic core: x' = lambda x + (1 - lambda) x[perm], same for targets.
MixupResult mix_pairs(const Matrix& features, const Matrix& targets, double lambda,
                      const std::vector<std::size_t>& permutation);

}  // namespace headbench
