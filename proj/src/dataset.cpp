#include "headbench/dataset.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <random>
#include <unordered_set>

#include "headbench/binary_io.hpp"
#include "headbench/error.hpp"

namespace headbench {

namespace fs = std::filesystem;
using nlohmann::json;

std::string_view to_string(Split split) {
  switch (split) {
    case Split::train: return "train";
    case Split::val: return "val";
    case Split::test: return "test";
  }
  return "train";
}

Split parse_split(std::string_view text) {
  if (text == "train") return Split::train;
  if (text == "val") return Split::val;
  if (text == "test") return Split::test;
  throw ValidationError("unknown split '" + std::string(text) + "' (expected train, val or test)");
}

std::vector<std::size_t> EmbeddingDataset::indices(Split split) const {
  std::vector<std::size_t> out;
  for (std::size_t i = 0; i < splits.size(); ++i)
    if (splits[i] == split) out.push_back(i);
  return out;
}

void EmbeddingDataset::validate() const {
  const std::size_t n = labels.size();
  if (splits.size() != n || ids.size() != n) throw ValidationError("labels, splits and ids must have equal length");
  if (features.size() != n * dim) throw ValidationError("feature matrix size does not match n x dim");
  for (std::size_t i = 0; i < features.size(); ++i)
    if (!std::isfinite(features[i]))
      throw ValidationError("non-finite feature in row " + std::to_string(i / std::max<std::size_t>(dim, 1)));
  for (std::size_t i = 0; i < n; ++i)
    if (labels[i] < 0 || labels[i] >= registry.size())
      throw ValidationError("label " + std::to_string(labels[i]) + " of sample '" + ids[i] + "' is outside [0, " +
                            std::to_string(registry.size()) + ")");
  std::unordered_set<std::string_view> seen;
  for (const auto& id : ids)
    if (!seen.insert(id).second) throw ValidationError("duplicate sample id '" + id + "'");
}

long CountVector::total() const {
  long t = 0;
  for (long c : counts) t += c;
  return t;
}

CountVector class_counts(std::span<const ClassId> labels, int num_classes) {
  CountVector out{std::vector<long>(static_cast<std::size_t>(num_classes), 0)};
  for (ClassId c : labels) {
    if (c < 0 || c >= num_classes) throw ValidationError("label out of range in class_counts");
    ++out.counts[static_cast<std::size_t>(c)];
  }
  return out;
}

CountVector class_counts(const EmbeddingDataset& dataset, Split split) {
  CountVector out{std::vector<long>(static_cast<std::size_t>(dataset.registry.size()), 0)};
  for (std::size_t i = 0; i < dataset.size(); ++i)
    if (dataset.splits[i] == split) ++out.counts[static_cast<std::size_t>(dataset.labels[i])];
  return out;
}

std::vector<std::size_t> balanced_sampler(std::span<const ClassId> labels, std::size_t epoch_len, std::uint64_t seed) {
  if (labels.empty()) throw ValidationError("balanced sampler needs at least one sample");
  if (epoch_len == 0) throw ValidationError("epoch_len must be at least 1");
  const ClassId max_label = *std::max_element(labels.begin(), labels.end());
  std::vector<std::vector<std::size_t>> by_class(static_cast<std::size_t>(max_label) + 1);
  for (std::size_t i = 0; i < labels.size(); ++i) {
    if (labels[i] < 0) throw ValidationError("negative label in balanced sampler");
    by_class[static_cast<std::size_t>(labels[i])].push_back(i);
  }
  std::vector<const std::vector<std::size_t>*> present;
  for (const auto& members : by_class)
    if (!members.empty()) present.push_back(&members);

  std::mt19937_64 rng(seed);
  std::uniform_int_distribution<std::size_t> pick_class(0, present.size() - 1);
  std::vector<std::size_t> out;
  out.reserve(epoch_len);
  for (std::size_t k = 0; k < epoch_len; ++k) {
    const auto& members = *present[pick_class(rng)];
    std::uniform_int_distribution<std::size_t> pick(0, members.size() - 1);
    out.push_back(members[pick(rng)]);
  }
  return out;
}

// ---- EMB1 ------------------------------------------------------------------

void write_features(const fs::path& path, std::size_t n, std::size_t d, std::span<const float> values) {
  if (values.size() != n * d) throw ValidationError("feature buffer does not match n x d");
  if (n > UINT32_MAX || d > UINT32_MAX) throw ValidationError("feature matrix too large for EMB1");
  std::ofstream os(path, std::ios::binary | std::ios::trunc);
  if (!os) throw IoError("cannot open '" + path.string() + "' for writing");
  os.write("EMB1", 4);
  binary::write<std::uint32_t>(os, static_cast<std::uint32_t>(n));
  binary::write<std::uint32_t>(os, static_cast<std::uint32_t>(d));
  for (float v : values) binary::write<float>(os, v);
  if (!os) throw IoError("write failed for '" + path.string() + "'");
}

std::vector<float> read_features(const fs::path& path, std::size_t& n, std::size_t& d) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw IoError("cannot open feature file '" + path.string() + "'");
  char magic[4];
  if (!is.read(magic, 4) || std::string_view(magic, 4) != "EMB1")
    throw IoError("'" + path.string() + "' is not an EMB1 feature file");
  n = binary::read<std::uint32_t>(is, "EMB1 row count");
  d = binary::read<std::uint32_t>(is, "EMB1 dimension");
  const auto payload = static_cast<std::uintmax_t>(fs::file_size(path)) - 12;
  if (payload != static_cast<std::uintmax_t>(n) * d * sizeof(float))
    throw IoError("dimension mismatch in '" + path.string() + "': header declares " + std::to_string(n) + " x " +
                  std::to_string(d) + " but payload holds " + std::to_string(payload) + " bytes");
  std::vector<float> values(n * d);
  for (auto& v : values) v = binary::read<float>(is, "EMB1 payload");
  return values;
}

// ---- manifest ----------------------------------------------------------------

namespace {

std::vector<std::string> read_lines(const fs::path& path) {
  std::ifstream is(path);
  if (!is) throw IoError("cannot open '" + path.string() + "'");
  std::vector<std::string> lines;
  std::string line;
  while (std::getline(is, line)) {
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    lines.push_back(line);
  }
  return lines;
}

void write_lines(const fs::path& path, const std::vector<std::string>& lines) {
  std::ofstream os(path, std::ios::trunc);
  if (!os) throw IoError("cannot open '" + path.string() + "' for writing");
  for (const auto& l : lines) os << l << '\n';
}

fs::path resolve(const fs::path& base, const std::string& p) {
  fs::path path(p);
  return path.is_absolute() ? path : base / path;
}

}  // namespace

EmbeddingDataset load_dataset(const fs::path& manifest_path) {
  std::ifstream is(manifest_path);
  if (!is) throw IoError("cannot open manifest '" + manifest_path.string() + "'");
  json m;
  try {
    is >> m;
  } catch (const json::exception& e) {
    throw IoError("malformed manifest '" + manifest_path.string() + "': " + e.what());
  }
  const fs::path base = manifest_path.parent_path();

  EmbeddingDataset ds;
  try {
    ds.registry = m.contains("classes") ? ClassRegistry(m.at("classes").get<std::vector<std::string>>()) : ClassRegistry();
    ds.dim = m.at("dim").get<std::size_t>();
    std::size_t n = 0, d = 0;
    ds.features = read_features(resolve(base, m.at("features").get<std::string>()), n, d);
    if (d != ds.dim)
      throw IoError("dimension mismatch: manifest declares dim=" + std::to_string(ds.dim) + " but feature file has " +
                    std::to_string(d));
    const auto label_lines = read_lines(resolve(base, m.at("labels").get<std::string>()));
    const auto split_lines = read_lines(resolve(base, m.at("splits").get<std::string>()));
    ds.ids = read_lines(resolve(base, m.at("ids").get<std::string>()));
    if (label_lines.size() != n || split_lines.size() != n || ds.ids.size() != n)
      throw IoError("manifest files disagree on sample count (features have " + std::to_string(n) + ")");
    ds.labels.reserve(n);
    for (const auto& l : label_lines) {
      std::size_t pos = 0;
      long v = std::stol(l, &pos);
      if (pos != l.size()) throw IoError("malformed label '" + l + "'");
      ds.labels.push_back(static_cast<ClassId>(v));
    }
    for (const auto& s : split_lines) ds.splits.push_back(parse_split(s));
  } catch (const json::exception& e) {
    throw IoError("malformed manifest '" + manifest_path.string() + "': " + e.what());
  } catch (const std::invalid_argument&) {
    throw IoError("non-integer label in '" + manifest_path.string() + "'");
  }
  ds.validate();
  return ds;
}

void save_dataset(const EmbeddingDataset& ds, const fs::path& manifest_path) {
  ds.validate();
  const fs::path base = manifest_path.parent_path();
  if (!base.empty()) fs::create_directories(base);
  const std::string stem = manifest_path.stem().string();
  const std::string features = stem + ".emb", labels = stem + ".labels.txt", splits = stem + ".splits.txt",
                    ids = stem + ".ids.txt";

  write_features(base / features, ds.size(), ds.dim, ds.features);
  std::vector<std::string> lines;
  for (ClassId c : ds.labels) lines.push_back(std::to_string(c));
  write_lines(base / labels, lines);
  lines.clear();
  for (Split s : ds.splits) lines.emplace_back(to_string(s));
  write_lines(base / splits, lines);
  write_lines(base / ids, ds.ids);

  json m = {{"classes", ds.registry.names()}, {"dim", ds.dim}, {"features", features},
            {"labels", labels},              {"splits", splits}, {"ids", ids}};
  std::ofstream os(manifest_path, std::ios::trunc);
  if (!os) throw IoError("cannot open '" + manifest_path.string() + "' for writing");
  os << m.dump(2) << '\n';
}

// ---- synthetic continuum -------------------------------------------------------

std::vector<long> SyntheticConfig::long_tail_counts(std::size_t num_classes, long largest, double ratio, long floor) {
  std::vector<long> out;
  double v = static_cast<double>(largest);
  for (std::size_t i = 0; i < num_classes; ++i) {
    out.push_back(std::max(floor, static_cast<long>(std::floor(v))));
    v *= ratio;
  }
  return out;
}

void SyntheticConfig::validate() const {
  if (dim == 0) throw ValidationError("synthetic dim must be >= 1");
  ClassRegistry registry(class_names);
  if (!counts.empty() && counts.size() != class_names.size())
    throw ValidationError("synthetic counts must have one entry per class");
  for (long c : counts)
    if (c < 1) throw ValidationError("synthetic counts must be >= 1 per class");
  for (const auto& c : chain)
    if (!registry.find(c)) throw ValidationError("chain class '" + c + "' is not in the registry");
  if (!(adjacency_step > 0.0)) throw ValidationError("adjacency_step must be > 0");
  if (!(class_separation > 0.0)) throw ValidationError("class_separation must be > 0");
  if (!(noise >= 0.0) || !std::isfinite(noise)) throw ValidationError("noise must be finite and >= 0");
}

void to_json(json& j, const SyntheticConfig& c) {
  j = json{{"dim", c.dim},
           {"classes", c.class_names},
           {"counts", c.counts},
           {"chain", c.chain},
           {"adjacency_step", c.adjacency_step},
           {"class_separation", c.class_separation},
           {"noise", c.noise},
           {"seed", c.seed}};
}

void from_json(const json& j, SyntheticConfig& c) {
  c = SyntheticConfig{};
  if (j.contains("dim")) j.at("dim").get_to(c.dim);
  if (j.contains("classes")) j.at("classes").get_to(c.class_names);
  if (j.contains("counts")) j.at("counts").get_to(c.counts);
  if (j.contains("chain")) j.at("chain").get_to(c.chain);
  if (j.contains("adjacency_step")) j.at("adjacency_step").get_to(c.adjacency_step);
  if (j.contains("class_separation")) j.at("class_separation").get_to(c.class_separation);
  if (j.contains("noise")) j.at("noise").get_to(c.noise);
  if (j.contains("seed")) j.at("seed").get_to(c.seed);
}

namespace {

std::vector<double> random_unit(std::mt19937_64& rng, std::size_t d) {
  std::normal_distribution<double> normal(0.0, 1.0);
  std::vector<double> v(d);
  double norm = 0.0;
  do {
    norm = 0.0;
    for (auto& x : v) {
      x = normal(rng);
      norm += x * x;
    }
  } while (norm == 0.0);
  norm = std::sqrt(norm);
  for (auto& x : v) x /= norm;
  return v;
}

}  // namespace

EmbeddingDataset generate_synthetic(const SyntheticConfig& config) {
  config.validate();
  EmbeddingDataset ds;
  ds.registry = ClassRegistry(config.class_names);
  ds.dim = config.dim;
  const auto C = static_cast<std::size_t>(ds.registry.size());
  const std::vector<long> counts = config.counts.empty() ? SyntheticConfig::long_tail_counts(C) : config.counts;

  std::mt19937_64 rng(config.seed);
  std::vector<std::vector<double>> means(C);
  for (std::size_t c = 0; c < C; ++c) {
    means[c] = random_unit(rng, config.dim);
    for (auto& x : means[c]) x *= config.class_separation;
  }
  // Chain classes form a random walk: each stage sits one adjacency step away from the previous.
  for (std::size_t k = 1; k < config.chain.size(); ++k) {
    const auto prev = static_cast<std::size_t>(ds.registry.index_of(config.chain[k - 1]));
    const auto cur = static_cast<std::size_t>(ds.registry.index_of(config.chain[k]));
    const auto step = random_unit(rng, config.dim);
    for (std::size_t i = 0; i < config.dim; ++i) means[cur][i] = means[prev][i] + config.adjacency_step * step[i];
  }

  std::normal_distribution<double> normal(0.0, 1.0);
  for (std::size_t c = 0; c < C; ++c) {
    const auto n = static_cast<std::size_t>(counts[c]);
    std::vector<std::size_t> order(n);
    for (std::size_t i = 0; i < n; ++i) order[i] = i;
    std::shuffle(order.begin(), order.end(), rng);
    const std::size_t n_train = n * 6 / 10, n_val = n / 10;
    std::vector<Split> split_of(n);
    for (std::size_t k = 0; k < n; ++k)
      split_of[order[k]] = k < n_train ? Split::train : (k < n_train + n_val ? Split::val : Split::test);

    for (std::size_t i = 0; i < n; ++i) {
      for (std::size_t j = 0; j < config.dim; ++j) {
        const double noise = config.noise > 0.0 ? config.noise * normal(rng) : 0.0;
        ds.features.push_back(static_cast<float>(means[c][j] + noise));
      }
      ds.labels.push_back(static_cast<ClassId>(c));
      ds.splits.push_back(split_of[i]);
      char id[32];
      std::snprintf(id, sizeof(id), "s%07zu", ds.ids.size());
      ds.ids.emplace_back(id);
    }
  }
  ds.validate();
  return ds;
}

}  // namespace headbench
