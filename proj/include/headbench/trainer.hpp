#pragma once

#include <cstdint>
#include <functional>
#include <span>
#include <string>
#include <vector>

#include <json.hpp>

#include "headbench/dataset.hpp"
#include "headbench/model.hpp"
#include "headbench/objective.hpp"

namespace headbench {

enum class SamplerKind { sequential_shuffled, balanced };

struct FreezeMask {
  bool trunk = false;
  bool stem = false;
  bool head = false;

  bool frozen(ParamGroup group) const;
  bool operator==(const FreezeMask&) const = default;
};

struct AdamWConfig {
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  double weight_decay = 0.01;  // not applied to tensors with decay == false
};

struct StageConfig {
  std::string name = "S1";
  int epochs = 11;
  double lr_head = 2.5e-5;
  double lr_trunk = 5.0e-6;
  int warmup_epochs = 2;
  std::size_t batch_size = 32;
  int grad_accum_steps = 1;
  LossConfig loss;
  SamplerKind sampler = SamplerKind::sequential_shuffled;
  FreezeMask freeze;
  AdamWConfig adamw;

  void validate() const;
};

void to_json(nlohmann::json& j, const StageConfig& c);
void from_json(const nlohmann::json& j, StageConfig& c);

// The three chained stages (11/5/5 epochs; 2.5e-5/5e-6, 1e-5/2e-6, 5e-6/1e-6; 2 warmup epochs in S1).
// `lr_scale` multiplies both groups of every stage, e.g. to adapt to small desk batches.
std::vector<StageConfig> default_schedule(double lr_scale = 1.0, std::size_t batch_size = 32);

// Head-only weighted cross-entropy with effective-number weights and class-balanced sampling.
StageConfig decoupled_stage(double lr_scale = 1.0, std::size_t batch_size = 32);

struct OptimizerState {
  std::vector<std::vector<double>> m;
  std::vector<std::vector<double>> v;
  long step = 0;
  AdamWConfig hyper;

  static OptimizerState for_model(const HeadModel& model, const AdamWConfig& hyper = {});
};

// One decoupled-weight-decay Adam update of a single tensor at (1-based) step `t`.
void adamw_update(std::span<double> param, std::span<const double> grad, std::span<double> m, std::span<double> v,
                  long t, double lr, bool apply_decay, const AdamWConfig& hyper);

// Trunk tensors use lr_trunk; stem and head tensors use lr_head. Frozen groups are left untouched.
void adamw_step(HeadModel& model, const Gradients& grads, OptimizerState& state, double lr_head, double lr_trunk,
                const FreezeMask& freeze = {});

struct LearningRates {
  double head = 0.0;
  double trunk = 0.0;
};

// Linear warmup from 0 over warmup_epochs * steps_per_epoch optimizer steps, then constant.
LearningRates lr_at(const StageConfig& stage, long step, long steps_per_epoch);

struct EpochLog {
  std::string stage;
  int epoch = 0;
  double train_loss = 0.0;
  double val_macro_f1 = 0.0;
  double val_tail_macro_f1 = 0.0;
  double val_tail_composite = 0.0;
  double lr_head = 0.0;
  double lr_trunk = 0.0;

  bool operator==(const EpochLog&) const = default;
};

nlohmann::json to_json(const EpochLog& log);

struct StageResult {
  HeadModel best;
  int best_epoch = 0;  // 1-based; ties go to the earliest epoch
  std::vector<EpochLog> log;
};

struct TrainOptions {
  std::vector<ClassId> tail_set;  // empty: WBC tail classes present in the registry
  std::function<void(const EpochLog&)> on_epoch;
};

Matrix gather_features(const EmbeddingDataset& dataset, std::span<const std::size_t> indices);
std::vector<ClassId> argmax_rows(const Matrix& logits);  // ties -> lowest index

StageResult train_stage(const HeadModel& init, const EmbeddingDataset& dataset, const StageConfig& stage,
                        std::uint64_t seed, const TrainOptions& options = {});

// Stage k+1 starts from stage k's best checkpoint with a fresh optimizer; stage k uses seed + k.
std::vector<StageResult> run_multistage(const HeadModel& init, const EmbeddingDataset& dataset,
                                        const std::vector<StageConfig>& stages, std::uint64_t seed,
                                        const TrainOptions& options = {});

StageResult decoupled_retrain(const HeadModel& checkpoint, const EmbeddingDataset& dataset, const StageConfig& stage,
                              std::uint64_t seed, const TrainOptions& options = {});

}  // namespace headbench
