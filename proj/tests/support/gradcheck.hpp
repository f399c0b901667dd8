#pragma once

// Central finite-difference oracle for the reverse-mode tape. Test-only: it
// evaluates the forward graph alone and never consults recorded gradients.

#include <algorithm>
#include <cmath>
#include <functional>
#include <vector>

#include "anchortune/numerics/tape.hpp"

namespace anchortune::testing {

using GraphFn = std::function<Var<double>(Tape<double>&, const std::vector<Var<double>>&)>;

struct GradCheckResult {
  double max_rel_error = 0.0;  // worst over inputs of ||analytic - numeric|| / max(||.||, floor)
  std::size_t checked = 0;
};

inline double forward_value(const GraphFn& fn, const std::vector<Tensor<double>>& inputs) {
  Tape<double> tape;
  std::vector<Var<double>> vars;
  for (const auto& t : inputs) vars.push_back(tape.constant(t));
  return fn(tape, vars).value().item();
}

// Checks every element of every input listed in `which` (all when empty).
inline GradCheckResult grad_check(const GraphFn& fn, std::vector<Tensor<double>> inputs, double h = 1e-6,
                                  std::vector<int> which = {}) {
  if (which.empty())
    for (int i = 0; i < static_cast<int>(inputs.size()); ++i) which.push_back(i);
  Tape<double> tape;
  std::vector<Var<double>> vars;
  for (const auto& t : inputs) vars.push_back(tape.variable(t));
  auto loss = fn(tape, vars);
  tape.backward(loss);

  GradCheckResult res;
  for (int idx : which) {
    auto& x = inputs[static_cast<std::size_t>(idx)];
    auto analytic = tape.grad_of(vars[static_cast<std::size_t>(idx)]);
    std::vector<double> numeric(x.size());
    for (std::size_t i = 0; i < x.size(); ++i) {
      const double orig = x[i];
      x[i] = orig + h;
      const double up = forward_value(fn, inputs);
      x[i] = orig - h;
      const double down = forward_value(fn, inputs);
      x[i] = orig;
      numeric[i] = (up - down) / (2 * h);
    }
    double diff = 0, na = 0, nn = 0;
    for (std::size_t i = 0; i < x.size(); ++i) {
      const double a = analytic.empty() ? 0.0 : analytic[i];
      diff += (a - numeric[i]) * (a - numeric[i]);
      na += a * a;
      nn += numeric[i] * numeric[i];
    }
    const double denom = std::max({std::sqrt(na), std::sqrt(nn), 1e-10});
    res.max_rel_error = std::max(res.max_rel_error, std::sqrt(diff) / denom);
    res.checked += x.size();
  }
  return res;
}

}  // namespace anchortune::testing
