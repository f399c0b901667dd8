#pragma once

#include <vector>

#include "anchortune/numerics/tensor.hpp"

namespace anchortune::inference {

// Guided interpolation over the hole: inside, the discrete Laplacian of the
// output matches that of `source`; known pixels keep `target` values.
// 5-point stencil; neighbors outside the image are dropped (replicated border).
struct BlendProblem {
  Tensor<float> target;  // [C,H,W], original with the composited hole
  Tensor<float> source;  // [C,H,W], network output providing the guidance gradients
  Tensor<float> mask;    // [H,W] or [1,H,W], 1 = known
  double tolerance = 1e-9;  // on the max-norm residual
  int max_iterations = 5000;
};

struct BlendResult {
  Tensor<float> image;  // [C,H,W]; known pixels copied from target
  int iterations = 0;   // max over channels
  double residual = 0;  // max over channels of ||A f - b||_inf
};

struct ChannelSolve {
  std::vector<double> values;  // H*W, known pixels hold the target
  int iterations = 0;
  double residual = 0;
};

// Conjugate gradients for one channel in double precision.
ChannelSolve solve_poisson_channel(const double* target, const double* source, const float* mask, int h, int w,
                                   double tolerance, int max_iterations);

// Throws NumericError when a channel does not reach the tolerance.
BlendResult poisson_blend(const BlendProblem& problem);

}  // namespace anchortune::inference
