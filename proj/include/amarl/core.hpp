#pragma once

#include <algorithm>
#include <cstdint>
#include <stdexcept>
#include <string>
#include <unordered_map>
#include <vector>

namespace amarl {

using StateId = std::uint32_t;
using ActionId = std::uint32_t;
using JointActionId = std::uint32_t;
using BlockId = std::uint32_t;
using AtomId = std::uint32_t;

inline constexpr StateId kNoState = 0xffffffffu;

/// Base class for all library errors; subcommands map these to exit code 1.
struct Error : std::runtime_error {
  explicit Error(const std::string& what) : std::runtime_error(what) {}
};

struct ModelError : Error {
  using Error::Error;
};
struct ParseError : Error {
  using Error::Error;
};
struct CheckError : Error {
  using Error::Error;
};

/// Interned atomic propositions. Ids are assigned in insertion order, so a
/// model built the same way twice gets identical ids.
class AtomTable {
 public:
  AtomId intern(const std::string& name) {
    auto it = index_.find(name);
    if (it != index_.end()) return it->second;
    const AtomId id = static_cast<AtomId>(names_.size());
    names_.push_back(name);
    index_.emplace(name, id);
    return id;
  }

  /// Lookup without inserting; returns false if the atom is unknown.
  bool find(const std::string& name, AtomId& out) const {
    auto it = index_.find(name);
    if (it == index_.end()) return false;
    out = it->second;
    return true;
  }

  const std::string& name(AtomId id) const { return names_.at(id); }
  std::size_t size() const { return names_.size(); }

 private:
  std::vector<std::string> names_;
  std::unordered_map<std::string, AtomId> index_;
};

/// A set of atoms, kept sorted and duplicate-free.
using LabelSet = std::vector<AtomId>;

inline LabelSet make_label_set(std::vector<AtomId> atoms) {
  std::sort(atoms.begin(), atoms.end());
  atoms.erase(std::unique(atoms.begin(), atoms.end()), atoms.end());
  return atoms;
}

inline bool label_contains(const LabelSet& l, AtomId a) {
  return std::binary_search(l.begin(), l.end(), a);
}

/// l restricted to the sorted atom list `scope`.
inline LabelSet label_project(const LabelSet& l, const LabelSet& scope) {
  LabelSet out;
  std::set_intersection(l.begin(), l.end(), scope.begin(), scope.end(),
                        std::back_inserter(out));
  return out;
}

struct LabelSetHash {
  std::size_t operator()(const LabelSet& l) const {
    std::size_t h = 0x9e3779b97f4a7c15ull;
    for (AtomId a : l) h = (h ^ (a + 0x9e3779b9u)) * 0x100000001b3ull;
    return h;
  }
};

}  // namespace amarl
