#pragma once

#include <optional>
#include <string>
#include <string_view>
#include <vector>

namespace headbench {

using ClassId = int;

// Ordered set of class names. The default is the 13-class WBC registry.
class ClassRegistry {
 public:
  ClassRegistry();
  explicit ClassRegistry(std::vector<std::string> names);

  int size() const noexcept { return static_cast<int>(names_.size()); }
  const std::string& name(ClassId id) const;
  const std::vector<std::string>& names() const noexcept { return names_; }

  std::optional<ClassId> find(std::string_view name) const;
  ClassId index_of(std::string_view name) const;  // throws ValidationError

  bool operator==(const ClassRegistry& other) const = default;

 private:
  std::vector<std::string> names_;
};

// SNE, LY, MO, EO, BA, VLY, BNE, MMY, MY, PMY, BL, PC, PLY
const std::vector<std::string>& wbc_class_names();

// Tail classes monitored by TailMacroF1: BNE, PLY, VLY, MMY, PMY, MY, PC.
const std::vector<std::string>& wbc_tail_names();

// Maturation order PMY -> MY -> MMY -> BNE -> SNE.
const std::vector<std::string>& wbc_continuum_chain();

// Resolves names against a registry, silently skipping names it does not contain.
std::vector<ClassId> resolve_present(const ClassRegistry& registry, const std::vector<std::string>& names);

}  // namespace headbench
