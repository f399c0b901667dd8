#include "anchortune/evaluation/frechet.hpp"

#include <algorithm>
#include <cmath>

#include <Eigen/Dense>

#include "anchortune/error.hpp"

namespace anchortune::eval {

namespace {

using Mat = Eigen::MatrixXd;

Mat to_mat(const std::vector<double>& m, int d) {
  return Eigen::Map<const Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>>(m.data(), d, d);
}

Mat sqrt_psd(const Mat& m) {
  Eigen::SelfAdjointEigenSolver<Mat> es(m);
  if (es.info() != Eigen::Success) throw NumericError("matrix_sqrt_psd: eigendecomposition failed");
  const Eigen::VectorXd ev = es.eigenvalues().cwiseMax(0.0).cwiseSqrt();
  return es.eigenvectors() * ev.asDiagonal() * es.eigenvectors().transpose();
}

}  // namespace

std::vector<double> matrix_sqrt_psd(const std::vector<double>& m, int d, double symmetry_tolerance) {
  if (d <= 0 || m.size() != static_cast<std::size_t>(d) * d)
    throw ShapeError("matrix_sqrt_psd: expected " + std::to_string(d) + "x" + std::to_string(d) + " entries");
  const Mat a = to_mat(m, d);
  const double asym = (a - a.transpose()).cwiseAbs().maxCoeff();
  if (asym > symmetry_tolerance)
    throw DomainError("matrix_sqrt_psd: matrix is not symmetric (max |M - M^T| = " + std::to_string(asym) + ")");
  const Mat s = sqrt_psd(0.5 * (a + a.transpose()));
  std::vector<double> out(m.size());
  for (int i = 0; i < d; ++i)
    for (int j = 0; j < d; ++j) out[static_cast<std::size_t>(i * d + j)] = s(i, j);
  return out;
}

template <typename T>
Moments feature_moments(const Tensor<T>& f, bool allow_shrinkage) {
  if (f.rank() != 2) throw ShapeError("feature_moments: expected [n,d], got " + shape_str(f.shape()));
  Moments m;
  m.n = f.dim(0);
  m.d = f.dim(1);
  if (m.n < 2) throw DomainError("feature_moments: need at least 2 samples, got " + std::to_string(m.n));
  const int n = m.n, d = m.d;
  m.mean.assign(static_cast<std::size_t>(d), 0.0);
  for (int i = 0; i < n; ++i)
    for (int j = 0; j < d; ++j) m.mean[j] += f[static_cast<std::size_t>(i * d + j)];
  for (auto& v : m.mean) v /= n;
  m.cov.assign(static_cast<std::size_t>(d) * d, 0.0);
  for (int i = 0; i < n; ++i)
    for (int a = 0; a < d; ++a) {
      const double da = f[static_cast<std::size_t>(i * d + a)] - m.mean[a];
      for (int b = a; b < d; ++b) m.cov[a * d + b] += da * (f[static_cast<std::size_t>(i * d + b)] - m.mean[b]);
    }
  for (int a = 0; a < d; ++a)
    for (int b = a; b < d; ++b) {
      m.cov[a * d + b] /= (n - 1);
      m.cov[b * d + a] = m.cov[a * d + b];
    }
  if (n < d + 1) {
    if (!allow_shrinkage)
      throw NumericError("covariance of " + std::to_string(n) + " samples in dimension " + std::to_string(d) +
                         " is rank-deficient; enable shrinkage or provide at least d + 1 samples");
    double tr = 0;
    for (int a = 0; a < d; ++a) tr += m.cov[a * d + a];
    const double eps = 1e-6 * tr / d;
    for (int a = 0; a < d; ++a) m.cov[a * d + a] += eps;
    m.shrunk = true;
  }
  return m;
}

template Moments feature_moments(const Tensor<float>&, bool);
template Moments feature_moments(const Tensor<double>&, bool);

double frechet_distance(const Moments& a, const Moments& b) {
  if (a.d != b.d)
    throw ShapeError("frechet_distance: feature dimensions differ (" + std::to_string(a.d) + " vs " + std::to_string(b.d) + ")");
  const int d = a.d;
  double mean_term = 0;
  for (int j = 0; j < d; ++j) mean_term += (a.mean[j] - b.mean[j]) * (a.mean[j] - b.mean[j]);
  const Mat sa = to_mat(a.cov, d), sb = to_mat(b.cov, d);
  // Tr((Sa Sb)^{1/2}) = Tr((Sa^{1/2} Sb Sa^{1/2})^{1/2}); the latter is symmetric PSD.
  const Mat ra = sqrt_psd(sa);
  const Mat inner = ra * sb * ra;
  const Mat cross = sqrt_psd(0.5 * (inner + inner.transpose()));
  const double v = mean_term + sa.trace() + sb.trace() - 2.0 * cross.trace();
  return std::max(0.0, v);
}

}  // namespace anchortune::eval
