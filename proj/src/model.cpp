#include "headbench/model.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numbers>

#include "headbench/binary_io.hpp"
#include "headbench/error.hpp"

namespace headbench {

namespace fs = std::filesystem;
using nlohmann::json;

std::string_view to_string(HeadFamily family) {
  switch (family) {
    case HeadFamily::linear: return "linear";
    case HeadFamily::cosine: return "cosine";
    case HeadFamily::mlp: return "mlp";
  }
  return "linear";
}

HeadFamily parse_family(std::string_view text) {
  if (text == "linear") return HeadFamily::linear;
  if (text == "cosine") return HeadFamily::cosine;
  if (text == "mlp") return HeadFamily::mlp;
  throw ValidationError("unknown head family '" + std::string(text) + "' (expected linear, cosine or mlp)");
}

void ModelConfig::validate() const {
  if (dim == 0) throw ValidationError("model dim must be >= 1");
  if (num_classes < 2) throw ValidationError("model needs at least two classes");
  if (!(stem_dropout >= 0.0 && stem_dropout < 1.0)) throw ValidationError("stem_dropout must lie in [0, 1)");
  if (!(hidden_dropout >= 0.0 && hidden_dropout < 1.0)) throw ValidationError("hidden_dropout must lie in [0, 1)");
  if (!(cosine_scale > 0.0) || !std::isfinite(cosine_scale)) throw ValidationError("cosine_scale must be > 0");
  if (!(ln_eps > 0.0)) throw ValidationError("ln_eps must be > 0");
}

void to_json(json& j, const ModelConfig& c) {
  j = json{{"family", to_string(c.family)},
           {"dim", c.dim},
           {"num_classes", c.num_classes},
           {"hidden", c.hidden},
           {"use_trunk", c.use_trunk},
           {"stem_dropout", c.stem_dropout},
           {"hidden_dropout", c.hidden_dropout},
           {"cosine_scale", c.cosine_scale},
           {"ln_eps", c.ln_eps}};
}

void from_json(const json& j, ModelConfig& c) {
  c = ModelConfig{};
  if (j.contains("family")) c.family = parse_family(j.at("family").get<std::string>());
  if (j.contains("dim")) j.at("dim").get_to(c.dim);
  if (j.contains("num_classes")) j.at("num_classes").get_to(c.num_classes);
  if (j.contains("hidden")) j.at("hidden").get_to(c.hidden);
  if (j.contains("use_trunk")) j.at("use_trunk").get_to(c.use_trunk);
  if (j.contains("stem_dropout")) j.at("stem_dropout").get_to(c.stem_dropout);
  if (j.contains("hidden_dropout")) j.at("hidden_dropout").get_to(c.hidden_dropout);
  if (j.contains("cosine_scale")) j.at("cosine_scale").get_to(c.cosine_scale);
  if (j.contains("ln_eps")) j.at("ln_eps").get_to(c.ln_eps);
}

namespace {

// Positions of each tensor in HeadModel::params().
struct Slots {
  int trunk_w = -1, trunk_b = -1, gamma = 0, beta = 1;
  int w = -1, b = -1;                    // linear / cosine
  int w1 = -1, b1 = -1, w2 = -1, b2 = -1;  // mlp
};

Slots slots_for(const ModelConfig& c) {
  Slots s;
  int next = 0;
  if (c.use_trunk) {
    s.trunk_w = next++;
    s.trunk_b = next++;
  }
  s.gamma = next++;
  s.beta = next++;
  switch (c.family) {
    case HeadFamily::linear:
      s.w = next++;
      s.b = next++;
      break;
    case HeadFamily::cosine:
      s.w = next++;
      break;
    case HeadFamily::mlp:
      s.w1 = next++;
      s.b1 = next++;
      s.w2 = next++;
      s.b2 = next++;
      break;
  }
  return s;
}

Tensor make_tensor(std::string name, std::size_t rows, std::size_t cols, ParamGroup group, bool decay) {
  return Tensor{std::move(name), rows, cols, std::vector<double>(rows * cols, 0.0), group, decay};
}

void fill_normal(Tensor& t, double stddev, std::mt19937_64& rng) {
  std::normal_distribution<double> normal(0.0, stddev);
  for (auto& v : t.values) v = normal(rng);
}

}  // namespace

HeadModel HeadModel::create(const ModelConfig& config, std::uint64_t seed) {
  config.validate();
  HeadModel m;
  m.config_ = config;
  m.seed = seed;
  const std::size_t d = config.dim, C = config.num_classes, h = config.hidden_width();
  std::mt19937_64 rng(seed);

  if (config.use_trunk) {
    auto w = make_tensor("trunk.weight", d, d, ParamGroup::trunk, true);
    for (std::size_t i = 0; i < d; ++i) w.values[i * d + i] = 1.0;
    m.params_.push_back(std::move(w));
    m.params_.push_back(make_tensor("trunk.bias", d, 1, ParamGroup::trunk, false));
  }
  auto gamma = make_tensor("stem.gamma", d, 1, ParamGroup::stem, false);
  std::fill(gamma.values.begin(), gamma.values.end(), 1.0);
  m.params_.push_back(std::move(gamma));
  m.params_.push_back(make_tensor("stem.beta", d, 1, ParamGroup::stem, false));

  const double inv_sqrt_d = 1.0 / std::sqrt(static_cast<double>(d));
  switch (config.family) {
    case HeadFamily::linear: {
      auto w = make_tensor("head.weight", C, d, ParamGroup::head, true);
      fill_normal(w, inv_sqrt_d, rng);
      m.params_.push_back(std::move(w));
      m.params_.push_back(make_tensor("head.bias", C, 1, ParamGroup::head, false));
      break;
    }
    case HeadFamily::cosine: {
      auto w = make_tensor("head.weight", C, d, ParamGroup::head, true);
      fill_normal(w, inv_sqrt_d, rng);
      m.params_.push_back(std::move(w));
      break;
    }
    case HeadFamily::mlp: {
      auto w1 = make_tensor("head.fc1.weight", h, d, ParamGroup::head, true);
      fill_normal(w1, inv_sqrt_d, rng);
      auto w2 = make_tensor("head.fc2.weight", C, h, ParamGroup::head, true);
      fill_normal(w2, 1.0 / std::sqrt(static_cast<double>(h)), rng);
      m.params_.push_back(std::move(w1));
      m.params_.push_back(make_tensor("head.fc1.bias", h, 1, ParamGroup::head, false));
      m.params_.push_back(std::move(w2));
      m.params_.push_back(make_tensor("head.fc2.bias", C, 1, ParamGroup::head, false));
      break;
    }
  }
  return m;
}

const Tensor& HeadModel::param(std::string_view name) const {
  for (const auto& t : params_)
    if (t.name == name) return t;
  throw NotFoundError("model has no parameter '" + std::string(name) + "'");
}

Tensor& HeadModel::param(std::string_view name) {
  return const_cast<Tensor&>(std::as_const(*this).param(name));
}

// ---- elementary layers --------------------------------------------------------

std::vector<double> layer_norm(std::span<const double> f, std::span<const double> gamma,
                               std::span<const double> beta, double eps) {
  const std::size_t d = f.size();
  double mean = 0.0;
  for (double v : f) mean += v;
  mean /= static_cast<double>(d);
  double var = 0.0;
  for (double v : f) var += (v - mean) * (v - mean);
  var /= static_cast<double>(d);
  const double inv_std = 1.0 / std::sqrt(var + eps);
  std::vector<double> out(d);
  for (std::size_t i = 0; i < d; ++i) out[i] = gamma[i] * ((f[i] - mean) * inv_std) + beta[i];
  return out;
}

namespace {

std::vector<double> draw_mask(std::size_t n, double p, std::mt19937_64& rng) {
  if (p == 0.0) return {};
  std::bernoulli_distribution keep(1.0 - p);
  const double scale = 1.0 / (1.0 - p);
  std::vector<double> mask(n);
  for (auto& m : mask) m = keep(rng) ? scale : 0.0;
  return mask;
}

}  // namespace

std::vector<double> dropout(std::span<const double> z, double p, std::mt19937_64& rng, bool training) {
  if (!(p >= 0.0 && p < 1.0)) throw ValidationError("dropout rate must lie in [0, 1)");
  std::vector<double> out(z.begin(), z.end());
  if (!training || p == 0.0) return out;
  const auto mask = draw_mask(z.size(), p, rng);
  for (std::size_t i = 0; i < out.size(); ++i) out[i] *= mask[i];
  return out;
}

double gelu(double x) { return 0.5 * x * (1.0 + std::erf(x / std::numbers::sqrt2)); }

double gelu_derivative(double x) {
  const double cdf = 0.5 * (1.0 + std::erf(x / std::numbers::sqrt2));
  const double pdf = std::exp(-0.5 * x * x) / std::sqrt(2.0 * std::numbers::pi);
  return cdf + x * pdf;
}

std::vector<double> softmax(std::span<const double> logits) {
  const double max_logit = *std::max_element(logits.begin(), logits.end());
  std::vector<double> p(logits.size());
  double sum = 0.0;
  for (std::size_t k = 0; k < logits.size(); ++k) {
    p[k] = std::exp(logits[k] - max_logit);
    sum += p[k];
  }
  for (auto& v : p) v /= sum;
  return p;
}

DropoutMask sample_dropout_mask(const HeadModel& model, std::mt19937_64& rng) {
  const auto& c = model.config();
  DropoutMask mask;
  mask.stem = draw_mask(c.dim, c.stem_dropout, rng);
  if (c.family == HeadFamily::mlp) mask.hidden = draw_mask(c.hidden_width(), c.hidden_dropout, rng);
  return mask;
}

// ---- forward / backward ------------------------------------------------------

namespace {

struct Trace {
  std::vector<double> input;  // trunk input
  std::vector<double> xhat;   // normalized stem input
  double inv_std = 0.0;
  std::vector<double> z;      // stem output after dropout
  double z_norm = 0.0;        // cosine
  std::vector<double> w_norms;
  std::vector<double> pre;    // mlp pre-activation
  std::vector<double> hidden; // mlp hidden after dropout
  std::vector<double> logits;
};

void run_forward(const HeadModel& model, const Slots& s, std::span<const double> f, const DropoutMask* mask, Trace& t) {
  const auto& c = model.config();
  const auto& P = model.params();
  const std::size_t d = c.dim, C = c.num_classes;
  if (f.size() != d) throw ValidationError("feature length " + std::to_string(f.size()) + " != model dim " + std::to_string(d));

  t.input.assign(f.begin(), f.end());
  std::vector<double> u(d);
  if (s.trunk_w >= 0) {
    const auto& A = P[s.trunk_w].values;
    const auto& a = P[s.trunk_b].values;
    for (std::size_t i = 0; i < d; ++i) {
      double acc = a[i];
      for (std::size_t j = 0; j < d; ++j) acc += A[i * d + j] * f[j];
      u[i] = acc;
    }
  } else {
    u.assign(f.begin(), f.end());
  }

  double mean = 0.0;
  for (double v : u) mean += v;
  mean /= static_cast<double>(d);
  double var = 0.0;
  for (double v : u) var += (v - mean) * (v - mean);
  var /= static_cast<double>(d);
  t.inv_std = 1.0 / std::sqrt(var + c.ln_eps);
  t.xhat.resize(d);
  t.z.resize(d);
  const auto& gamma = P[s.gamma].values;
  const auto& beta = P[s.beta].values;
  const bool stem_drop = mask && !mask->stem.empty();
  for (std::size_t i = 0; i < d; ++i) {
    t.xhat[i] = (u[i] - mean) * t.inv_std;
    const double ln = gamma[i] * t.xhat[i] + beta[i];
    t.z[i] = stem_drop ? ln * mask->stem[i] : ln;
  }

  t.logits.assign(C, 0.0);
  switch (c.family) {
    case HeadFamily::linear: {
      const auto& W = P[s.w].values;
      const auto& b = P[s.b].values;
      for (std::size_t k = 0; k < C; ++k) {
        double acc = b[k];
        for (std::size_t i = 0; i < d; ++i) acc += W[k * d + i] * t.z[i];
        t.logits[k] = acc;
      }
      break;
    }
    case HeadFamily::cosine: {
      const auto& W = P[s.w].values;
      double zz = 0.0;
      for (double v : t.z) zz += v * v;
      t.z_norm = std::sqrt(zz);
      t.w_norms.assign(C, 0.0);
      for (std::size_t k = 0; k < C; ++k) {
        double ww = 0.0, wz = 0.0;
        for (std::size_t i = 0; i < d; ++i) {
          ww += W[k * d + i] * W[k * d + i];
          wz += W[k * d + i] * t.z[i];
        }
        t.w_norms[k] = std::sqrt(ww);
        // Degenerate z or w_k: logit defined as 0.
        if (t.z_norm > 0.0 && t.w_norms[k] > 0.0) t.logits[k] = c.cosine_scale * wz / (t.w_norms[k] * t.z_norm);
      }
      break;
    }
    case HeadFamily::mlp: {
      const std::size_t h = c.hidden_width();
      const auto& W1 = P[s.w1].values;
      const auto& b1 = P[s.b1].values;
      const auto& W2 = P[s.w2].values;
      const auto& b2 = P[s.b2].values;
      const bool hid_drop = mask && !mask->hidden.empty();
      t.pre.resize(h);
      t.hidden.resize(h);
      for (std::size_t r = 0; r < h; ++r) {
        double acc = b1[r];
        for (std::size_t i = 0; i < d; ++i) acc += W1[r * d + i] * t.z[i];
        t.pre[r] = acc;
        const double g = gelu(acc);
        t.hidden[r] = hid_drop ? g * mask->hidden[r] : g;
      }
      for (std::size_t k = 0; k < C; ++k) {
        double acc = b2[k];
        for (std::size_t r = 0; r < h; ++r) acc += W2[k * h + r] * t.hidden[r];
        t.logits[k] = acc;
      }
      break;
    }
  }
}

// Reverse pass for one sample given dL/dlogits; accumulates into `g`.
void run_backward(const HeadModel& model, const Slots& s, const Trace& t, const DropoutMask* mask,
                  std::span<const double> dy, Gradients& g) {
  const auto& c = model.config();
  const auto& P = model.params();
  const std::size_t d = c.dim, C = c.num_classes;
  std::vector<double> dz(d, 0.0);

  switch (c.family) {
    case HeadFamily::linear: {
      const auto& W = P[s.w].values;
      auto& gW = g.values[s.w];
      auto& gb = g.values[s.b];
      for (std::size_t k = 0; k < C; ++k) {
        gb[k] += dy[k];
        for (std::size_t i = 0; i < d; ++i) {
          gW[k * d + i] += dy[k] * t.z[i];
          dz[i] += W[k * d + i] * dy[k];
        }
      }
      break;
    }
    case HeadFamily::cosine: {
      if (t.z_norm == 0.0) break;
      const auto& W = P[s.w].values;
      auto& gW = g.values[s.w];
      const double scale = c.cosine_scale;
      std::vector<double> zhat(d), dzhat(d, 0.0);
      for (std::size_t i = 0; i < d; ++i) zhat[i] = t.z[i] / t.z_norm;
      for (std::size_t k = 0; k < C; ++k) {
        const double wn = t.w_norms[k];
        if (wn == 0.0 || dy[k] == 0.0) continue;
        // d/dw_k of s <zhat, w_k/|w_k|> = s (zhat - what (what . zhat)) / |w_k|
        double what_zhat = 0.0;
        for (std::size_t i = 0; i < d; ++i) what_zhat += (W[k * d + i] / wn) * zhat[i];
        for (std::size_t i = 0; i < d; ++i) {
          const double what = W[k * d + i] / wn;
          gW[k * d + i] += scale * dy[k] * (zhat[i] - what * what_zhat) / wn;
          dzhat[i] += scale * dy[k] * what;
        }
      }
      double proj = 0.0;
      for (std::size_t i = 0; i < d; ++i) proj += zhat[i] * dzhat[i];
      for (std::size_t i = 0; i < d; ++i) dz[i] = (dzhat[i] - zhat[i] * proj) / t.z_norm;
      break;
    }
    case HeadFamily::mlp: {
      const std::size_t h = c.hidden_width();
      const auto& W1 = P[s.w1].values;
      const auto& W2 = P[s.w2].values;
      auto& gW1 = g.values[s.w1];
      auto& gb1 = g.values[s.b1];
      auto& gW2 = g.values[s.w2];
      auto& gb2 = g.values[s.b2];
      std::vector<double> dhidden(h, 0.0);
      for (std::size_t k = 0; k < C; ++k) {
        gb2[k] += dy[k];
        for (std::size_t r = 0; r < h; ++r) {
          gW2[k * h + r] += dy[k] * t.hidden[r];
          dhidden[r] += W2[k * h + r] * dy[k];
        }
      }
      const bool hid_drop = mask && !mask->hidden.empty();
      for (std::size_t r = 0; r < h; ++r) {
        double dpre = dhidden[r] * gelu_derivative(t.pre[r]);
        if (hid_drop) dpre *= mask->hidden[r];
        gb1[r] += dpre;
        for (std::size_t i = 0; i < d; ++i) {
          gW1[r * d + i] += dpre * t.z[i];
          dz[i] += W1[r * d + i] * dpre;
        }
      }
      break;
    }
  }

  // Stem: z = mask * (gamma * xhat + beta)
  const auto& gamma = P[s.gamma].values;
  auto& ggamma = g.values[s.gamma];
  auto& gbeta = g.values[s.beta];
  const bool stem_drop = mask && !mask->stem.empty();
  std::vector<double> dxhat(d);
  double mean_dxhat = 0.0, mean_dxhat_xhat = 0.0;
  for (std::size_t i = 0; i < d; ++i) {
    const double dln = stem_drop ? dz[i] * mask->stem[i] : dz[i];
    ggamma[i] += dln * t.xhat[i];
    gbeta[i] += dln;
    dxhat[i] = dln * gamma[i];
    mean_dxhat += dxhat[i];
    mean_dxhat_xhat += dxhat[i] * t.xhat[i];
  }
  if (s.trunk_w < 0) return;

  mean_dxhat /= static_cast<double>(d);
  mean_dxhat_xhat /= static_cast<double>(d);
  auto& gA = g.values[s.trunk_w];
  auto& ga = g.values[s.trunk_b];
  for (std::size_t i = 0; i < d; ++i) {
    const double du = t.inv_std * (dxhat[i] - mean_dxhat - t.xhat[i] * mean_dxhat_xhat);
    ga[i] += du;
    for (std::size_t j = 0; j < d; ++j) gA[i * d + j] += du * t.input[j];
  }
}

}  // namespace

std::vector<double> forward(const HeadModel& model, std::span<const double> f, const DropoutMask& mask) {
  Trace t;
  run_forward(model, slots_for(model.config()), f, &mask, t);
  return t.logits;
}

std::vector<double> forward(const HeadModel& model, std::span<const double> f, Mode mode, std::mt19937_64* rng) {
  Trace t;
  if (mode == Mode::train) {
    if (rng == nullptr) throw ValidationError("train-mode forward needs an rng");
    const auto mask = sample_dropout_mask(model, *rng);
    run_forward(model, slots_for(model.config()), f, &mask, t);
  } else {
    run_forward(model, slots_for(model.config()), f, nullptr, t);
  }
  return t.logits;
}

Matrix predict_logits(const HeadModel& model, const Matrix& features) {
  const Slots s = slots_for(model.config());
  Matrix out(features.rows, model.config().num_classes);
  Trace t;
  for (std::size_t i = 0; i < features.rows; ++i) {
    run_forward(model, s, features.row(i), nullptr, t);
    std::copy(t.logits.begin(), t.logits.end(), out.row(i).begin());
  }
  return out;
}

Gradients Gradients::zeros_like(const HeadModel& model) {
  Gradients g;
  for (const auto& p : model.params()) g.values.emplace_back(p.values.size(), 0.0);
  return g;
}

void Gradients::scale(double factor) {
  for (auto& v : values)
    for (auto& x : v) x *= factor;
}

double accumulate_gradients(const HeadModel& model, const Matrix& features, const Matrix& targets,
                            const LossSpec& loss, std::span<const DropoutMask> masks, Gradients& sum) {
  const auto& c = model.config();
  if (features.rows != targets.rows) throw ValidationError("features and targets disagree on batch size");
  if (features.cols != c.dim || targets.cols != c.num_classes) throw ValidationError("batch shape does not match model");
  if (!masks.empty() && masks.size() != features.rows) throw ValidationError("need one dropout mask per sample");
  if (sum.values.size() != model.params().size()) sum = Gradients::zeros_like(model);

  const Slots s = slots_for(c);
  Trace t;
  std::vector<double> dy(c.num_classes);
  double total = 0.0;
  for (std::size_t i = 0; i < features.rows; ++i) {
    const DropoutMask* mask = masks.empty() ? nullptr : &masks[i];
    run_forward(model, s, features.row(i), mask, t);
    total += sample_loss(t.logits, targets.row(i), loss, dy);
    run_backward(model, s, t, mask, dy, sum);
  }
  if (!std::isfinite(total)) throw NumericError("loss", "batch loss is not finite");
  for (std::size_t p = 0; p < sum.values.size(); ++p)
    for (double v : sum.values[p])
      if (!std::isfinite(v)) throw NumericError(model.params()[p].name, "gradient is not finite");
  return total;
}

BatchGradient backward(const HeadModel& model, const Matrix& features, const Matrix& targets, const LossSpec& loss,
                       std::span<const DropoutMask> masks) {
  BatchGradient out{0.0, Gradients::zeros_like(model)};
  if (features.rows == 0) return out;
  const double total = accumulate_gradients(model, features, targets, loss, masks, out.grads);
  const double inv = 1.0 / static_cast<double>(features.rows);
  out.loss = total * inv;
  out.grads.scale(inv);
  return out;
}

// ---- checkpoints ---------------------------------------------------------------

namespace {
constexpr std::uint32_t kCheckpointVersion = 1;
}

void save_checkpoint(const HeadModel& model, const fs::path& path) {
  json header;
  header["config"] = model.config();
  header["stage"] = model.stage_tag;
  header["seed"] = model.seed;
  json params = json::array();
  for (const auto& p : model.params()) params.push_back({{"name", p.name}, {"rows", p.rows}, {"cols", p.cols}});
  header["params"] = params;
  const std::string text = header.dump();

  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  std::ofstream os(path, std::ios::binary | std::ios::trunc);
  if (!os) throw IoError("cannot open '" + path.string() + "' for writing");
  os.write("HFCK", 4);
  binary::write<std::uint32_t>(os, kCheckpointVersion);
  binary::write<std::uint32_t>(os, static_cast<std::uint32_t>(text.size()));
  os.write(text.data(), static_cast<std::streamsize>(text.size()));
  for (const auto& p : model.params())
    for (double v : p.values) binary::write<double>(os, v);
  if (!os) throw IoError("write failed for '" + path.string() + "'");
}

HeadModel load_checkpoint(const fs::path& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw IoError("cannot open checkpoint '" + path.string() + "'");
  char magic[4];
  if (!is.read(magic, 4) || std::string_view(magic, 4) != "HFCK")
    throw IoError("'" + path.string() + "' is not an HFCK checkpoint");
  const auto version = binary::read<std::uint32_t>(is, "HFCK version");
  if (version != kCheckpointVersion) throw IoError("unsupported checkpoint version " + std::to_string(version));
  const auto length = binary::read<std::uint32_t>(is, "HFCK header length");
  std::string text(length, '\0');
  if (!is.read(text.data(), length)) throw IoError("truncated checkpoint header");

  json header;
  try {
    header = json::parse(text);
  } catch (const json::exception& e) {
    throw IoError(std::string("malformed checkpoint header: ") + e.what());
  }
  HeadModel model = HeadModel::create(header.at("config").get<ModelConfig>(), header.value("seed", std::uint64_t{0}));
  model.stage_tag = header.value("stage", std::string{});
  const auto& declared = header.at("params");
  if (declared.size() != model.params().size()) throw IoError("checkpoint parameter list does not match its config");
  for (std::size_t i = 0; i < declared.size(); ++i) {
    auto& p = model.params()[i];
    if (declared[i].at("name").get<std::string>() != p.name || declared[i].at("rows").get<std::size_t>() != p.rows ||
        declared[i].at("cols").get<std::size_t>() != p.cols)
      throw IoError("checkpoint parameter '" + declared[i].at("name").get<std::string>() + "' has unexpected layout");
    for (auto& v : p.values) v = binary::read<double>(is, p.name.c_str());
  }
  if (is.peek() != std::char_traits<char>::eof()) throw IoError("trailing bytes after checkpoint parameters");
  return model;
}

}  // namespace headbench
