#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <vector>

#include <json.hpp>

#include "headbench/model.hpp"
#include "headbench/trainer.hpp"

namespace headbench {

// Training run description (see docs/run_config.md).
struct RunConfig {
  std::filesystem::path manifest;
  std::uint64_t seed = 0;
  ModelConfig model;  // dim and num_classes are taken from the dataset
  std::vector<StageConfig> stages;
  std::optional<std::filesystem::path> init_checkpoint;
};

// Relative paths resolve against `base_dir`. Without an explicit "stages" array the three-stage
// schedule is built from lr_scale, family_lr_factor, batch_size, grad_accum_steps and loss.
RunConfig parse_run_config(const nlohmann::json& j, const std::filesystem::path& base_dir);

// Decoupled retraining stage: decoupled_stage() defaults overridden by lr_scale, epochs, batch_size,
// effective_beta, lr_head, freeze, or a full "stage" object.
StageConfig parse_decoupled_config(const nlohmann::json& j);

nlohmann::json read_json_file(const std::filesystem::path& path);

}  // namespace headbench
