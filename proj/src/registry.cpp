#include "headbench/registry.hpp"

#include <algorithm>
#include <unordered_set>

#include "headbench/error.hpp"

namespace headbench {

const std::vector<std::string>& wbc_class_names() {
  static const std::vector<std::string> names = {"SNE", "LY",  "MO",  "EO", "BA", "VLY", "BNE",
                                                  "MMY", "MY", "PMY", "BL", "PC", "PLY"};
  return names;
}

const std::vector<std::string>& wbc_tail_names() {
  static const std::vector<std::string> names = {"BNE", "PLY", "VLY", "MMY", "PMY", "MY", "PC"};
  return names;
}

const std::vector<std::string>& wbc_continuum_chain() {
  static const std::vector<std::string> names = {"PMY", "MY", "MMY", "BNE", "SNE"};
  return names;
}

ClassRegistry::ClassRegistry() : names_(wbc_class_names()) {}

ClassRegistry::ClassRegistry(std::vector<std::string> names) : names_(std::move(names)) {
  if (names_.empty()) throw ValidationError("class registry must contain at least one class");
  std::unordered_set<std::string> seen;
  for (const auto& n : names_) {
    if (n.empty()) throw ValidationError("class names must be non-empty");
    if (!seen.insert(n).second) throw ValidationError("duplicate class name '" + n + "'");
  }
}

const std::string& ClassRegistry::name(ClassId id) const {
  if (id < 0 || id >= size()) throw ValidationError("class id " + std::to_string(id) + " out of range");
  return names_[static_cast<std::size_t>(id)];
}

std::optional<ClassId> ClassRegistry::find(std::string_view name) const {
  auto it = std::find(names_.begin(), names_.end(), name);
  if (it == names_.end()) return std::nullopt;
  return static_cast<ClassId>(it - names_.begin());
}

ClassId ClassRegistry::index_of(std::string_view name) const {
  if (auto id = find(name)) return *id;
  throw ValidationError("unknown class '" + std::string(name) + "'");
}

std::vector<ClassId> resolve_present(const ClassRegistry& registry, const std::vector<std::string>& names) {
  std::vector<ClassId> out;
  for (const auto& n : names)
    if (auto id = registry.find(n)) out.push_back(*id);
  return out;
}

}  // namespace headbench
