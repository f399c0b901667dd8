#pragma once

#include <cstdint>
#include <cstring>
#include <deque>
#include <map>
#include <string>
#include <string_view>
#include <vector>

#include "anchortune/numerics/tape.hpp"

namespace anchortune {

// Ordered collection of named parameter tensors. Copies are deep; element
// addresses stay stable while entries are added.
template <typename T>
class ParamSet {
 public:
  struct Entry {
    std::string name;
    Tensor<T> tensor;
  };

  Tensor<T>& add(std::string name, Tensor<T> tensor) {
    if (index_.count(name)) throw DomainError("duplicate parameter name '" + name + "'");
    tensor.set_requires_grad(true);
    index_.emplace(name, entries_.size());
    entries_.push_back(Entry{std::move(name), std::move(tensor)});
    return entries_.back().tensor;
  }

  bool contains(std::string_view name) const { return index_.find(std::string(name)) != index_.end(); }

  Tensor<T>& operator[](std::string_view name) { return entries_[lookup(name)].tensor; }
  const Tensor<T>& operator[](std::string_view name) const { return entries_[lookup(name)].tensor; }

  std::size_t size() const noexcept { return entries_.size(); }
  const std::deque<Entry>& entries() const noexcept { return entries_; }
  std::deque<Entry>& entries() noexcept { return entries_; }

  std::vector<std::string> names() const {
    std::vector<std::string> out;
    for (const auto& e : entries_) out.push_back(e.name);
    return out;
  }

  // Tensors whose names start with any of the prefixes (all if none given).
  std::vector<Tensor<T>*> tensors(const std::vector<std::string>& prefixes = {}) {
    std::vector<Tensor<T>*> out;
    for (auto& e : entries_) {
      bool take = prefixes.empty();
      for (const auto& p : prefixes) take = take || e.name.rfind(p, 0) == 0;
      if (take) out.push_back(&e.tensor);
    }
    return out;
  }

  std::size_t num_values() const {
    std::size_t n = 0;
    for (const auto& e : entries_) n += e.tensor.size();
    return n;
  }

  void set_requires_grad(bool on) {
    for (auto& e : entries_) e.tensor.set_requires_grad(on);
  }
  void clear_grads() {
    for (auto& e : entries_) e.tensor.clear_grad();
  }

  template <typename U>
  ParamSet<U> cast() const {
    ParamSet<U> out;
    for (const auto& e : entries_) out.add(e.name, e.tensor.template cast<U>());
    return out;
  }

  // FNV-1a over names, shapes and raw value bytes.
  std::uint64_t checksum() const {
    std::uint64_t h = 1469598103934665603ull;
    auto mix = [&h](const void* p, std::size_t n) {
      const auto* b = static_cast<const unsigned char*>(p);
      for (std::size_t i = 0; i < n; ++i) {
        h ^= b[i];
        h *= 1099511628211ull;
      }
    };
    for (const auto& e : entries_) {
      mix(e.name.data(), e.name.size());
      for (int d : e.tensor.shape()) mix(&d, sizeof d);
      mix(e.tensor.data().data(), e.tensor.size() * sizeof(T));
    }
    return h;
  }

  friend bool operator==(const ParamSet& a, const ParamSet& b) {
    if (a.entries_.size() != b.entries_.size()) return false;
    for (std::size_t i = 0; i < a.entries_.size(); ++i)
      if (a.entries_[i].name != b.entries_[i].name || !(a.entries_[i].tensor == b.entries_[i].tensor)) return false;
    return true;
  }

 private:
  std::size_t lookup(std::string_view name) const {
    auto it = index_.find(std::string(name));
    if (it == index_.end()) throw DomainError("unknown parameter '" + std::string(name) + "'");
    return it->second;
  }

  std::deque<Entry> entries_;
  std::map<std::string, std::size_t> index_;
};

// Parameters of a ParamSet registered on a tape, bound lazily by name.
// Trainable bindings accumulate gradients into the tensors; frozen bindings
// never do.
template <typename T>
class Bound {
 public:
  Bound(Tape<T>& tape, ParamSet<T>& params) : tape_(&tape), mutable_(&params), params_(&params) {}
  Bound(Tape<T>& tape, const ParamSet<T>& params) : tape_(&tape), params_(&params) {}

  Var<T> operator[](std::string_view name) const {
    auto key = std::string(name);
    auto it = vars_.find(key);
    if (it != vars_.end()) return it->second;
    Var<T> v = mutable_ ? tape_->param((*mutable_)[name]) : tape_->view((*params_)[name]);
    vars_.emplace(std::move(key), v);
    return v;
  }

  // Substitutes an existing Var for a named parameter (e.g. to differentiate
  // with respect to a copy).
  void bind(std::string name, Var<T> v) { vars_.insert_or_assign(std::move(name), v); }

  Tape<T>& tape() const { return *tape_; }
  const ParamSet<T>& params() const { return *params_; }

 private:
  Tape<T>* tape_;
  ParamSet<T>* mutable_ = nullptr;
  const ParamSet<T>* params_;
  mutable std::map<std::string, Var<T>> vars_;
};

}  // namespace anchortune
