#pragma once

#include <cstdint>
#include <filesystem>
#include <random>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include <json.hpp>

#include "headbench/matrix.hpp"
#include "headbench/objective.hpp"

namespace headbench {

enum class HeadFamily { linear, cosine, mlp };
std::string_view to_string(HeadFamily family);
HeadFamily parse_family(std::string_view text);

// Learning-rate group membership. The stem belongs to the head optimizer group.
enum class ParamGroup { trunk, stem, head };

struct ModelConfig {
  HeadFamily family = HeadFamily::linear;
  std::size_t dim = 0;
  std::size_t num_classes = 13;
  std::size_t hidden = 0;  // MLP width; 0 means dim
  bool use_trunk = true;
  double stem_dropout = 0.1;
  double hidden_dropout = 0.1;
  double cosine_scale = 1.0;
  double ln_eps = 1e-5;

  std::size_t hidden_width() const { return hidden == 0 ? dim : hidden; }
  void validate() const;
  bool operator==(const ModelConfig&) const = default;
};

void to_json(nlohmann::json& j, const ModelConfig& c);
void from_json(const nlohmann::json& j, ModelConfig& c);

struct Tensor {
  std::string name;
  std::size_t rows = 0;
  std::size_t cols = 0;
  std::vector<double> values;
  ParamGroup group = ParamGroup::head;
  bool decay = true;  // false for LayerNorm affine and biases

  bool operator==(const Tensor&) const = default;
};

// Adapter trunk (identity-initialized affine) -> LayerNorm + Dropout stem -> one head family.
//
// Parameter order, which is also the checkpoint order:
//   trunk.weight, trunk.bias (when use_trunk), stem.gamma, stem.beta, then
//   linear: head.weight, head.bias | cosine: head.weight | mlp: head.fc1.weight, head.fc1.bias,
//   head.fc2.weight, head.fc2.bias
class HeadModel {
 public:
  HeadModel() = default;
  static HeadModel create(const ModelConfig& config, std::uint64_t seed);

  const ModelConfig& config() const noexcept { return config_; }
  std::vector<Tensor>& params() noexcept { return params_; }
  const std::vector<Tensor>& params() const noexcept { return params_; }
  const Tensor& param(std::string_view name) const;
  Tensor& param(std::string_view name);

  std::string stage_tag;
  std::uint64_t seed = 0;

  bool operator==(const HeadModel&) const = default;

 private:
  ModelConfig config_;
  std::vector<Tensor> params_;
};

enum class Mode { train, eval };

// Per-coordinate multipliers (0 or 1/(1-p)); empty vectors mean "no dropout".
struct DropoutMask {
  std::vector<double> stem;
  std::vector<double> hidden;
};

DropoutMask sample_dropout_mask(const HeadModel& model, std::mt19937_64& rng);

std::vector<double> layer_norm(std::span<const double> f, std::span<const double> gamma,
                               std::span<const double> beta, double eps);
std::vector<double> dropout(std::span<const double> z, double p, std::mt19937_64& rng, bool training);
double gelu(double x);
double gelu_derivative(double x);
std::vector<double> softmax(std::span<const double> logits);

// Logits for one feature vector. Train mode draws dropout masks from `rng` (required then).
std::vector<double> forward(const HeadModel& model, std::span<const double> f, Mode mode,
                            std::mt19937_64* rng = nullptr);
std::vector<double> forward(const HeadModel& model, std::span<const double> f, const DropoutMask& mask);

// Eval-mode logits for every row.
Matrix predict_logits(const HeadModel& model, const Matrix& features);

struct Gradients {
  std::vector<std::vector<double>> values;  // parallel to HeadModel::params()

  static Gradients zeros_like(const HeadModel& model);
  void scale(double factor);
  bool operator==(const Gradients&) const = default;
};

// Adds per-sample gradients of the loss (summed, not averaged) into `sum` and returns the summed loss.
// `masks` is either empty (no dropout) or has one entry per row.
double accumulate_gradients(const HeadModel& model, const Matrix& features, const Matrix& targets,
                            const LossSpec& loss, std::span<const DropoutMask> masks, Gradients& sum);

struct BatchGradient {
  double loss = 0.0;  // batch mean
  Gradients grads;    // gradient of the batch mean
};

BatchGradient backward(const HeadModel& model, const Matrix& features, const Matrix& targets, const LossSpec& loss,
                       std::span<const DropoutMask> masks = {});

// HFCK: "HFCK", u32 version, u32 header length, JSON header, float64 parameters in header order.
void save_checkpoint(const HeadModel& model, const std::filesystem::path& path);
HeadModel load_checkpoint(const std::filesystem::path& path);

}  // namespace headbench
