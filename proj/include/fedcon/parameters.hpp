#pragma once

#include <algorithm>
#include <cmath>
#include <map>
#include <optional>
#include <stdexcept>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "fedcon/tensor.hpp"

namespace fedcon {

class ParameterError : public std::runtime_error {
public:
  using std::runtime_error::runtime_error;
};

enum class Role { backbone, head, projector };

inline std::string_view role_name(Role role) {
  switch (role) {
    case Role::backbone: return "backbone";
    case Role::head: return "head";
    case Role::projector: return "projector";
  }
  return "?";
}

inline Role parse_role(std::string_view name) {
  if (name == "backbone") return Role::backbone;
  if (name == "head") return Role::head;
  if (name == "projector") return Role::projector;
  throw ParameterError("unknown role '" + std::string(name) + "'");
}

/// Trainable weights receive gradients; buffers (batch-norm running statistics)
/// travel with their layer but are never optimizer-updated.
enum class EntryKind { weight, buffer };

template <typename T>
struct ParamEntry {
  Tensor<T> value;
  Role role = Role::backbone;
  EntryKind kind = EntryKind::weight;

  friend bool operator==(const ParamEntry&, const ParamEntry&) = default;
};

/// Named tensors tagged with exactly one role each. Iteration order is
/// lexicographic by name, which is also the serialization order.
template <typename T>
class ParameterSet {
public:
  using Map = std::map<std::string, ParamEntry<T>, std::less<>>;

  void add(std::string name, Tensor<T> value, Role role, EntryKind kind = EntryKind::weight) {
    auto [it, inserted] = entries_.emplace(std::move(name), ParamEntry<T>{std::move(value), role, kind});
    if (!inserted) throw ParameterError("duplicate parameter name '" + it->first + "'");
  }

  bool contains(std::string_view name) const { return entries_.find(name) != entries_.end(); }

  const ParamEntry<T>& entry(std::string_view name) const {
    auto it = entries_.find(name);
    if (it == entries_.end()) throw ParameterError("missing parameter '" + std::string(name) + "'");
    return it->second;
  }
  ParamEntry<T>& entry(std::string_view name) {
    auto it = entries_.find(name);
    if (it == entries_.end()) throw ParameterError("missing parameter '" + std::string(name) + "'");
    return it->second;
  }
  const Tensor<T>& at(std::string_view name) const { return entry(name).value; }
  Tensor<T>& at(std::string_view name) { return entry(name).value; }

  const Map& entries() const noexcept { return entries_; }
  Map& entries() noexcept { return entries_; }
  std::size_t size() const noexcept { return entries_.size(); }
  bool empty() const noexcept { return entries_.empty(); }

  auto begin() const { return entries_.begin(); }
  auto end() const { return entries_.end(); }
  auto begin() { return entries_.begin(); }
  auto end() { return entries_.end(); }

  bool has_role(Role role) const {
    for (const auto& [name, e] : entries_)
      if (e.role == role) return true;
    return false;
  }

  /// Scalar count of trainable weights, optionally restricted to some roles.
  std::size_t weight_count(std::optional<Role> role = std::nullopt) const {
    std::size_t n = 0;
    for (const auto& [name, e] : entries_)
      if (e.kind == EntryKind::weight && (!role || e.role == *role)) n += e.value.size();
    return n;
  }

  std::vector<std::string> names() const {
    std::vector<std::string> out;
    out.reserve(entries_.size());
    for (const auto& [name, e] : entries_) out.push_back(name);
    return out;
  }

  /// Same names, shapes and roles, with every value zeroed.
  ParameterSet zeros_like() const {
    ParameterSet out;
    for (const auto& [name, e] : entries_) out.add(name, Tensor<T>(e.value.shape()), e.role, e.kind);
    return out;
  }

  template <typename U>
  ParameterSet<U> cast() const {
    ParameterSet<U> out;
    for (const auto& [name, e] : entries_) out.add(name, e.value.template cast<U>(), e.role, e.kind);
    return out;
  }

  friend bool operator==(const ParameterSet& a, const ParameterSet& b) { return a.entries_ == b.entries_; }

private:
  Map entries_;
};

/// Names, shapes, roles and entry kinds all match.
template <typename T>
bool shape_compatible(const ParameterSet<T>& a, const ParameterSet<T>& b) {
  if (a.size() != b.size()) return false;
  auto ia = a.begin();
  auto ib = b.begin();
  for (; ia != a.end(); ++ia, ++ib) {
    if (ia->first != ib->first || ia->second.role != ib->second.role ||
        ia->second.kind != ib->second.kind || ia->second.value.shape() != ib->second.value.shape())
      return false;
  }
  return true;
}

template <typename T>
void require_compatible(const ParameterSet<T>& a, const ParameterSet<T>& b, const char* what) {
  if (!shape_compatible(a, b)) throw ParameterError(std::string(what) + ": parameter sets are not shape-compatible");
}

/// Entries of one role. An absent role yields an empty set.
template <typename T>
ParameterSet<T> extract_role(const ParameterSet<T>& params, Role role) {
  ParameterSet<T> out;
  for (const auto& [name, e] : params)
    if (e.role == role) out.add(name, e.value, e.role, e.kind);
  return out;
}

/// Role-string overload; rejects names that are not a role.
template <typename T>
ParameterSet<T> extract_role(const ParameterSet<T>& params, std::string_view role) {
  return extract_role(params, parse_role(role));
}

/// Union of two sets whose roles and names are disjoint.
template <typename T>
ParameterSet<T> stitch(const ParameterSet<T>& base, const ParameterSet<T>& attachment) {
  for (const auto& [name, e] : attachment) {
    if (base.contains(name)) throw ParameterError("stitch: overlapping parameter '" + name + "'");
    if (base.has_role(e.role))
      throw ParameterError("stitch: role '" + std::string(role_name(e.role)) + "' present on both sides");
  }
  ParameterSet<T> out = base;
  for (const auto& [name, e] : attachment) out.add(name, e.value, e.role, e.kind);
  return out;
}

/// Overwrites every entry of `dst` that also exists in `src` (shapes must agree).
template <typename T>
void assign_entries(ParameterSet<T>& dst, const ParameterSet<T>& src) {
  for (const auto& [name, e] : src) {
    auto& d = dst.entry(name);
    if (d.value.shape() != e.value.shape() || d.role != e.role)
      throw ParameterError("assign: incompatible entry '" + name + "'");
    d.value = e.value;
  }
}

/// Largest absolute elementwise difference over all entries.
template <typename T>
double max_abs_diff(const ParameterSet<T>& a, const ParameterSet<T>& b) {
  require_compatible(a, b, "max_abs_diff");
  double m = 0;
  auto ib = b.begin();
  for (auto ia = a.begin(); ia != a.end(); ++ia, ++ib) {
    const auto& x = ia->second.value;
    const auto& y = ib->second.value;
    for (std::size_t i = 0; i < x.size(); ++i) m = std::max(m, std::abs(double(x[i]) - double(y[i])));
  }
  return m;
}

}  // namespace fedcon
