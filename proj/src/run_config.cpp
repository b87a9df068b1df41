#include "headbench/run_config.hpp"

#include <fstream>

#include "headbench/error.hpp"

namespace headbench {

namespace fs = std::filesystem;
using nlohmann::json;

json read_json_file(const fs::path& path) {
  std::ifstream is(path);
  if (!is) throw IoError("cannot open '" + path.string() + "'");
  try {
    return json::parse(is);
  } catch (const json::exception& e) {
    throw ValidationError("malformed JSON in '" + path.string() + "': " + e.what());
  }
}

RunConfig parse_run_config(const json& j, const fs::path& base_dir) {
  RunConfig rc;
  try {
    if (j.contains("manifest")) {
      fs::path p = j.at("manifest").get<std::string>();
      rc.manifest = p.is_absolute() ? p : base_dir / p;
    }
    rc.seed = j.value("seed", std::uint64_t{0});
    if (j.contains("model")) rc.model = j.at("model").get<ModelConfig>();
    if (j.contains("init_checkpoint")) {
      fs::path p = j.at("init_checkpoint").get<std::string>();
      rc.init_checkpoint = p.is_absolute() ? p : base_dir / p;
    }
    if (j.contains("stages")) {
      rc.stages = j.at("stages").get<std::vector<StageConfig>>();
    } else {
      const std::string schedule = j.value("schedule", std::string("default"));
      if (schedule != "default") throw ValidationError("unknown schedule '" + schedule + "'");
      const double scale = j.value("lr_scale", 1.0) * j.value("family_lr_factor", 1.0);
      rc.stages = default_schedule(scale, j.value("batch_size", std::size_t{32}));
      const int accum = j.value("grad_accum_steps", 1);
      LossConfig loss;
      if (j.contains("loss")) loss = j.at("loss").get<LossConfig>();
      for (auto& s : rc.stages) {
        s.grad_accum_steps = accum;
        s.loss = loss;
      }
    }
  } catch (const json::exception& e) {
    throw ValidationError(std::string("invalid run config: ") + e.what());
  }
  if (rc.stages.empty()) throw ValidationError("run config declares no stages");
  for (const auto& s : rc.stages) s.validate();
  return rc;
}

StageConfig parse_decoupled_config(const json& j) {
  try {
    if (j.contains("stage")) return j.at("stage").get<StageConfig>();
    StageConfig s = decoupled_stage(j.value("lr_scale", 1.0), j.value("batch_size", std::size_t{32}));
    s.epochs = j.value("epochs", s.epochs);
    if (j.contains("lr_head")) s.lr_head = j.at("lr_head").get<double>();
    s.loss.effective_beta = j.value("effective_beta", s.loss.effective_beta);
    if (j.contains("freeze")) {
      const auto& f = j.at("freeze");
      s.freeze.trunk = f.value("trunk", s.freeze.trunk);
      s.freeze.stem = f.value("stem", s.freeze.stem);
      s.freeze.head = f.value("head", s.freeze.head);
    }
    s.validate();
    return s;
  } catch (const json::exception& e) {
    throw ValidationError(std::string("invalid decoupled config: ") + e.what());
  }
}

}  // namespace headbench
