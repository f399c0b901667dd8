#pragma once

#include <deque>
#include <functional>
#include <initializer_list>
#include <string>
#include <vector>

#include "anchortune/numerics/tensor.hpp"

namespace anchortune {

template <typename T>
class Tape;

// Handle to a value recorded on a Tape. Cheap to copy; valid while the tape lives.
template <typename T>
class Var {
 public:
  Var() = default;

  bool valid() const noexcept { return tape_ != nullptr; }
  Tape<T>& tape() const { return *tape_; }
  int id() const noexcept { return id_; }
  const Tensor<T>& value() const { return tape_->value(id_); }
  const Shape& shape() const { return value().shape(); }
  bool requires_grad() const { return tape_->requires_grad(id_); }

 private:
  friend class Tape<T>;
  Var(Tape<T>* tape, int id) : tape_(tape), id_(id) {}
  Tape<T>* tape_ = nullptr;
  int id_ = -1;
};

// Single-owner record of primitive operations. Forward values are computed
// eagerly when an op is recorded; backward() replays the recorded closures in
// reverse recording order, which is a reverse topological order of the graph.
template <typename T>
class Tape {
 public:
  // Called with the tape and the id of the op's output value.
  using BackwardFn = std::function<void(Tape&, int)>;

  Tape() = default;
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  // Owned value that never receives a gradient.
  Var<T> constant(Tensor<T> value) {
    Node n;
    n.owned = std::move(value);
    return push(std::move(n));
  }

  // Owned leaf that receives a gradient, read back with grad_of().
  Var<T> variable(Tensor<T> value) {
    Node n;
    n.owned = std::move(value);
    n.requires_grad = true;
    return push(std::move(n));
  }

  // Non-owning reference to a parameter. If the tensor requires grad, backward()
  // accumulates into its gradient buffer. The tensor must outlive the tape and
  // must not be resized while referenced.
  Var<T> param(Tensor<T>& external) {
    Node n;
    n.ref = &external;
    n.requires_grad = external.requires_grad();
    if (n.requires_grad) n.sink = &external;
    return push(std::move(n));
  }

  // Non-owning frozen reference.
  Var<T> view(const Tensor<T>& external) {
    Node n;
    n.ref = &external;
    return push(std::move(n));
  }

  const Tensor<T>& value(int id) const {
    const Node& n = nodes_.at(static_cast<std::size_t>(id));
    return n.ref ? *n.ref : n.owned;
  }
  bool requires_grad(int id) const { return nodes_.at(static_cast<std::size_t>(id)).requires_grad; }

  // Gradient buffer of a node, zero-allocated on first access.
  std::span<T> grad(int id) {
    Node& n = nodes_.at(static_cast<std::size_t>(id));
    if (n.grad.empty()) n.grad.assign(value(id).size(), T(0));
    return n.grad;
  }
  bool has_grad(int id) const { return !nodes_.at(static_cast<std::size_t>(id)).grad.empty(); }

  // Gradient of a recorded value after backward(); empty if none flowed.
  std::span<const T> grad_of(const Var<T>& v) const { return nodes_.at(static_cast<std::size_t>(v.id())).grad; }

  // Records an op output. The closure runs during backward() only if the output
  // received a gradient; it is dropped entirely if no input requires grad.
  Var<T> record(Tensor<T> out, std::initializer_list<Var<T>> inputs, const char* name, BackwardFn fn) {
    return record(std::move(out), std::vector<Var<T>>(inputs), name, std::move(fn));
  }
  Var<T> record(Tensor<T> out, const std::vector<Var<T>>& inputs, const char* name, BackwardFn fn) {
    bool needs = false;
    for (const auto& in : inputs) {
      if (in.tape_ != this) throw DomainError(std::string(name) + ": input recorded on a different tape");
      needs = needs || requires_grad(in.id_);
    }
    Node n;
    n.owned = std::move(out);
    n.requires_grad = needs;
    Var<T> v = push(std::move(n));
    if (needs) ops_.push_back(Op{v.id_, name, std::move(fn)});
    return v;
  }

  // Reverse pass from a single-element value. Intermediate gradients from any
  // previous pass are discarded; parameter gradients accumulate.
  void backward(const Var<T>& loss) {
    if (loss.tape_ != this) throw DomainError("backward: loss recorded on a different tape");
    if (value(loss.id_).size() != 1)
      throw ShapeError("backward: loss must have one element, got shape " + shape_str(value(loss.id_).shape()));
    for (auto& n : nodes_) n.grad.clear();
    visited_.clear();
    if (requires_grad(loss.id_)) {
      grad(loss.id_)[0] = T(1);
      for (auto it = ops_.rbegin(); it != ops_.rend(); ++it) {
        if (!has_grad(it->out)) continue;
        visited_.push_back(static_cast<int>(std::distance(ops_.begin(), it.base()) - 1));
        it->fn(*this, it->out);
      }
    }
    for (auto& n : nodes_) {
      if (!n.sink) continue;
      auto g = n.sink->ensure_grad();
      for (std::size_t i = 0; i < n.grad.size(); ++i) g[i] += n.grad[i];
    }
  }

  std::size_t num_nodes() const noexcept { return nodes_.size(); }
  std::size_t num_ops() const noexcept { return ops_.size(); }
  std::string op_name(std::size_t i) const { return ops_.at(i).name; }
  int op_output(std::size_t i) const { return ops_.at(i).out; }
  // Indices of ops whose closures ran in the last backward(), in run order.
  const std::vector<int>& last_visit_order() const noexcept { return visited_; }

 private:
  struct Node {
    Tensor<T> owned;
    const Tensor<T>* ref = nullptr;
    Tensor<T>* sink = nullptr;
    bool requires_grad = false;
    std::vector<T> grad;
  };
  struct Op {
    int out;
    const char* name;
    BackwardFn fn;
  };

  Var<T> push(Node n) {
    nodes_.push_back(std::move(n));
    return Var<T>(this, static_cast<int>(nodes_.size() - 1));
  }

  std::deque<Node> nodes_;
  std::vector<Op> ops_;
  std::vector<int> visited_;
};

}  // namespace anchortune
