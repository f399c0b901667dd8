#pragma once

// Gradient-check fixtures for every differentiable primitive, shared by the
// numerics unit tests and the acceptance binary.

#include <string>
#include <vector>

#include "anchortune/model/mat_lite.hpp"
#include "anchortune/numerics/ops.hpp"
#include "anchortune/numerics/random.hpp"
#include "gradcheck.hpp"

namespace anchortune::testing {

// Reduces any output to a scalar through fixed random weights so every output
// element contributes a distinct coefficient to the gradient.
inline Var<double> project(const Var<double>& v, std::uint64_t seed = 99) {
  auto rng = make_rng(seed);
  auto w = v.tape().constant(randn<double>(v.shape(), rng));
  return ops::sum(ops::mul(v, w));
}

inline Tensor<double> rnd_input(Shape s, std::uint64_t seed, double scale = 1.0) {
  auto rng = make_rng(seed);
  return randn<double>(std::move(s), rng, scale);
}

struct PrimitiveCase {
  std::string name;
  GraphFn fn;
  std::vector<Tensor<double>> inputs;
};

inline std::vector<PrimitiveCase> primitive_cases() {
  const auto r = rnd_input;
  static const std::vector<unsigned char> valid{1, 0, 1, 1, 0, 0, 0, 1, 1, 1, 1, 0, 1, 0, 1, 1,
                                                0, 0, 0, 0, 1, 0, 0, 1, 1, 1, 0, 1, 1, 1, 1, 1};
  std::vector<PrimitiveCase> cases{
      {"leaky_relu", [](auto&, const auto& in) { return project(ops::leaky_relu(in[0], 0.2)); }, {r({2, 3, 4}, 1, 1)}},
      {"tanh", [](auto&, const auto& in) { return project(ops::tanh(in[0])); }, {r({5, 3}, 2, 1)}},
      {"square", [](auto&, const auto& in) { return project(ops::square(in[0])); }, {r({5, 3}, 3, 1)}},
      {"abs", [](auto&, const auto& in) { return project(ops::abs(in[0])); }, {r({4, 4}, 4, 1)}},
      {"rsqrt", [](auto&, const auto& in) { return project(ops::rsqrt(ops::affine(ops::square(in[0]), 1.0, 0.5))); },
       {r({6}, 5, 1)}},
      {"affine", [](auto&, const auto& in) { return project(ops::affine(in[0], -1.5, 0.25)); }, {r({3, 2}, 6, 1)}},
      {"add", [](auto&, const auto& in) { return project(ops::add(in[0], in[1])); }, {r({2, 3, 4}, 30, 1), r({3, 1}, 31, 1)}},
      {"sub", [](auto&, const auto& in) { return project(ops::sub(in[0], in[1])); }, {r({2, 1, 4}, 32, 1), r({2, 3, 4}, 33, 1)}},
      {"mul", [](auto&, const auto& in) { return project(ops::mul(in[0], in[1])); }, {r({2, 3, 2, 2}, 34, 1), r({3, 1, 1}, 35, 1)}},
      {"sum", [](auto&, const auto& in) { return ops::sum(ops::square(in[0])); }, {r({2, 2, 3}, 7, 1)}},
      {"mean", [](auto&, const auto& in) { return ops::mean(ops::square(in[0])); }, {r({2, 5}, 8, 1)}},
      {"sum_keep", [](auto&, const auto& in) { return project(ops::sum_keep(in[0], {1, 3})); }, {r({2, 3, 2, 4}, 9, 1)}},
      {"mean_spatial", [](auto&, const auto& in) { return project(ops::mean_spatial(in[0])); }, {r({2, 3, 4, 4}, 10, 1)}},
      {"reshape", [](auto&, const auto& in) { return project(ops::reshape(in[0], {6, 2})); }, {r({3, 4}, 11, 1)}},
      {"concat", [](auto&, const auto& in) { return project(ops::concat<double>({in[0], in[1]}, 1)); },
       {r({2, 3, 2}, 12, 1), r({2, 1, 2}, 13, 1)}},
      {"slice", [](auto&, const auto& in) { return project(ops::slice(in[0], 1, 1, 2)); }, {r({2, 4, 3}, 14, 1)}},
      {"resize_nearest", [](auto&, const auto& in) { return project(ops::resize_nearest(in[0], 4, 6)); },
       {r({1, 2, 2, 3}, 15, 1)}},
      {"linear", [](auto&, const auto& in) { return project(ops::linear(in[0], in[1], in[2])); },
       {r({3, 5}, 16, 1), r({4, 5}, 17, 1), r({4}, 18, 1)}},
      {"mse", [](auto&, const auto& in) { return ops::mse(in[0], in[1]); }, {r({2, 3, 3}, 19, 1), r({2, 3, 3}, 20, 1)}},
      {"l1_mean", [](auto&, const auto& in) { return ops::l1_mean(in[0], in[1]); },
       {r({2, 3, 3}, 21, 1), r({2, 3, 3}, 22, 1)}},
      {"l2_distance", [](auto&, const auto& in) { return ops::l2_distance(in[0], in[1]); }, {r({7}, 23, 1), r({7}, 24, 1)}},
      {"cosine_similarity", [](auto&, const auto& in) { return project(ops::cosine_similarity(in[0], in[1])); },
       {r({3, 6}, 25, 1), r({3, 6}, 26, 1)}},
      {"normalize_rows", [](auto&, const auto& in) { return project(ops::normalize_rows(in[0])); }, {r({3, 5}, 27, 1)}},
      {"standardize", [](auto&, const auto& in) { return project(ops::standardize(in[0])); }, {r({2, 3, 2, 2}, 28, 1)}},
      {"softmax_cross_entropy",
       [](auto&, const auto& in) {
         static const std::vector<int> labels{2, 0, 3};
         return ops::softmax_cross_entropy(in[0], labels);
       },
       {r({3, 4}, 29, 1)}},
      {"conv2d stride 1", [](auto&, const auto& in) { return project(ops::conv2d(in[0], in[1], in[2], 1, 1)); },
       {r({1, 3, 6, 6}, 40, 1), r({2, 3, 3, 3}, 41, 1), r({2}, 42, 1)}},
      {"conv2d stride 2", [](auto&, const auto& in) { return project(ops::conv2d(in[0], in[1], in[2], 2, 1)); },
       {r({1, 3, 6, 6}, 43, 1), r({2, 3, 3, 3}, 44, 1), r({2}, 45, 1)}},
      {"conv2d per-sample kernels", [](auto&, const auto& in) { return project(ops::conv2d(in[0], in[1], in[2], 1, 1)); },
       {r({2, 2, 4, 4}, 46, 1), r({2, 3, 2, 3, 3}, 47, 1), r({3}, 48, 1)}},
      {"masked_attention",
       [](auto&, const auto& in) { return project(ops::masked_attention(in[0], in[1], in[2], valid, 2)); },
       {r({2, 3, 4, 4}, 50, 1), r({2, 3, 4, 4}, 51, 1), r({2, 3, 4, 4}, 52, 1)}},
  };
  for (bool demod : {false, true})
    cases.push_back({std::string("modulated_conv") + (demod ? " demodulated" : ""),
                     [demod](auto&, const auto& in) {
                       return project(model::modulated_conv(in[0], in[1], in[2], in[3], 1, demod));
                     },
                     {r({2, 3, 5, 5}, 60, 1), r({4, 3, 3, 3}, 61, 1), r({4}, 62, 1), r({2, 3}, 63, 1)}});
  return cases;
}

}  // namespace anchortune::testing
