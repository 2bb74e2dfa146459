#pragma once

#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

#include "orbitkit/autodiff.hpp"
#include "orbitkit/io.hpp"

namespace orbitkit {

/// Optimizer group: "pretrained" backbone weights versus newly added modules.
enum class ParamGroup { Pretrained, New };

inline const char* group_name(ParamGroup g) { return g == ParamGroup::New ? "new" : "pretrained"; }

/// Ordered named parameter tensors. Every weight exists exactly once.
template <typename Real>
class ParamSet {
 public:
  struct Entry {
    std::string name;
    Tensor<Real> value;
    ParamGroup group;
  };

  void add(std::string name, Tensor<Real> value, ParamGroup group = ParamGroup::Pretrained) {
    if (index_.count(name)) throw std::invalid_argument("duplicate parameter " + name);
    index_.emplace(name, entries_.size());
    entries_.push_back({std::move(name), std::move(value), group});
  }

  bool contains(const std::string& name) const { return index_.count(name) != 0; }
  std::size_t index_of(const std::string& name) const {
    auto it = index_.find(name);
    if (it == index_.end()) throw std::out_of_range("unknown parameter " + name);
    return it->second;
  }
  Tensor<Real>& operator[](const std::string& name) { return entries_[index_of(name)].value; }
  const Tensor<Real>& operator[](const std::string& name) const { return entries_[index_of(name)].value; }

  std::vector<Entry>& entries() { return entries_; }
  const std::vector<Entry>& entries() const { return entries_; }
  std::size_t size() const { return entries_.size(); }

  std::int64_t scalar_count() const {
    std::int64_t n = 0;
    for (const auto& e : entries_) n += static_cast<std::int64_t>(e.value.size());
    return n;
  }

  template <typename To>
  ParamSet<To> cast() const {
    ParamSet<To> out;
    for (const auto& e : entries_) out.add(e.name, e.value.template cast<To>(), e.group);
    return out;
  }

  void to_checkpoint(Checkpoint& ck, const std::string& prefix) const {
    for (const auto& e : entries_) ck.add(prefix + e.name, e.value.template cast<float>());
  }

  /// Loads every parameter of this set from `ck`; shapes must match.
  void from_checkpoint(const Checkpoint& ck, const std::string& prefix) {
    for (auto& e : entries_) {
      const auto& t = ck.at(prefix + e.name);
      if (t.shape() != e.value.shape())
        throw FormatError("parameter " + e.name + " has shape " + shape_str(t.shape()) + ", expected " +
                          shape_str(e.value.shape()));
      e.value = t.template cast<Real>();
    }
  }

 private:
  std::vector<Entry> entries_;
  std::unordered_map<std::string, std::size_t> index_;
};

/// Parameters placed on a tape, looked up by name.
template <typename Real>
class Bound {
 public:
  Bound() = default;
  Bound(Tape<Real>& tape, const ParamSet<Real>& params, bool trainable) : params_(&params) {
    vars_.reserve(params.size());
    for (const auto& e : params.entries()) vars_.push_back(trainable ? tape.variable(e.value) : tape.constant(e.value));
  }

  /// Adopts existing nodes, one per parameter in ParamSet order.
  Bound(const ParamSet<Real>& params, std::vector<Var<Real>> vars) : params_(&params), vars_(std::move(vars)) {
    if (vars_.size() != params.size()) throw std::invalid_argument("Bound: one node per parameter required");
  }

  Var<Real> operator()(const std::string& name) const { return vars_[params_->index_of(name)]; }
  const std::vector<Var<Real>>& vars() const { return vars_; }
  const ParamSet<Real>& params() const { return *params_; }

 private:
  const ParamSet<Real>* params_ = nullptr;
  std::vector<Var<Real>> vars_;
};

/// Gradients of every bound parameter, in ParamSet order.
template <typename Real>
std::vector<Tensor<Real>> collect_grads(const Tape<Real>& tape, const Bound<Real>& bound) {
  std::vector<Tensor<Real>> out;
  out.reserve(bound.vars().size());
  for (auto v : bound.vars()) out.push_back(tape.grad(v));
  return out;
}

}  // namespace orbitkit
