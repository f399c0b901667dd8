#pragma once

#include <vector>

#include "anchortune/numerics/tensor.hpp"

namespace anchortune::eval {

// Square root of a symmetric PSD matrix (row-major d x d) by eigendecomposition,
// negative eigenvalues clamped to 0. Throws DomainError when |M - M^T| > tol.
std::vector<double> matrix_sqrt_psd(const std::vector<double>& m, int d, double symmetry_tolerance = 1e-8);

struct Moments {
  int n = 0;
  int d = 0;
  std::vector<double> mean;  // [d]
  std::vector<double> cov;   // [d*d], unbiased
  bool shrunk = false;       // eps*I added because n < d + 1
};

// Rows of `features` [n,d] are samples. With n < d + 1 the covariance gets
// eps*I, eps = 1e-6 * trace / d, or a NumericError when shrinkage is disallowed.
template <typename T>
Moments feature_moments(const Tensor<T>& features, bool allow_shrinkage = true);

// ||mu_a - mu_b||^2 + Tr(S_a + S_b - 2 (S_a S_b)^{1/2}), clamped at 0.
double frechet_distance(const Moments& a, const Moments& b);

template <typename T>
double frechet_distance(const Tensor<T>& a, const Tensor<T>& b, bool allow_shrinkage = true) {
  return frechet_distance(feature_moments(a, allow_shrinkage), feature_moments(b, allow_shrinkage));
}

}  // namespace anchortune::eval
