#pragma once

#include <cmath>
#include <cstdint>
#include <string>
#include <vector>

#include "anchortune/numerics/tensor.hpp"

namespace anchortune {

enum class OptimizerKind { Sgd, Adam };

struct OptimizerConfig {
  OptimizerKind kind = OptimizerKind::Adam;
  double learning_rate = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

template <typename T>
struct OptimizerState {
  OptimizerConfig config;
  std::vector<std::vector<T>> first_moment;   // Adam only
  std::vector<std::vector<T>> second_moment;  // Adam only
  std::uint64_t step_count = 0;
};

// First-order optimizer over externally owned parameter tensors. step()
// requires a gradient buffer on every parameter, applies the update in place
// and clears the gradients.
template <typename T>
class Optimizer {
 public:
  Optimizer(OptimizerConfig config, std::vector<Tensor<T>*> params) : params_(std::move(params)) {
    state_.config = config;
    if (config.kind == OptimizerKind::Adam) {
      for (auto* p : params_) {
        state_.first_moment.emplace_back(p->size(), T(0));
        state_.second_moment.emplace_back(p->size(), T(0));
      }
    }
  }

  void step() {
    for (std::size_t k = 0; k < params_.size(); ++k)
      if (!params_[k]->has_grad())
        throw DomainError("optimizer step: parameter " + std::to_string(k) + " of shape " +
                          shape_str(params_[k]->shape()) + " has no gradient");
    ++state_.step_count;
    const auto& c = state_.config;
    const T lr = static_cast<T>(c.learning_rate);
    for (std::size_t k = 0; k < params_.size(); ++k) {
      auto data = params_[k]->data();
      auto grad = params_[k]->grad();
      if (c.kind == OptimizerKind::Sgd) {
        for (std::size_t i = 0; i < data.size(); ++i) data[i] -= lr * grad[i];
      } else {
        auto& m = state_.first_moment[k];
        auto& v = state_.second_moment[k];
        const T b1 = static_cast<T>(c.beta1), b2 = static_cast<T>(c.beta2);
        const T bc1 = T(1) - static_cast<T>(std::pow(c.beta1, static_cast<double>(state_.step_count)));
        const T bc2 = T(1) - static_cast<T>(std::pow(c.beta2, static_cast<double>(state_.step_count)));
        const T eps = static_cast<T>(c.eps);
        for (std::size_t i = 0; i < data.size(); ++i) {
          m[i] = b1 * m[i] + (T(1) - b1) * grad[i];
          v[i] = b2 * v[i] + (T(1) - b2) * grad[i] * grad[i];
          data[i] -= lr * (m[i] / bc1) / (std::sqrt(v[i] / bc2) + eps);
        }
      }
      params_[k]->clear_grad();
    }
  }

  void zero_grad() {
    for (auto* p : params_) p->clear_grad();
  }
  void set_learning_rate(double lr) { state_.config.learning_rate = lr; }
  const OptimizerState<T>& state() const noexcept { return state_; }

 private:
  std::vector<Tensor<T>*> params_;
  OptimizerState<T> state_;
};

}  // namespace anchortune
