#include "anchortune/inference/poisson.hpp"

#include <algorithm>
#include <cmath>

#include "anchortune/error.hpp"

namespace anchortune::inference {

namespace {

constexpr int kDy[4] = {-1, 1, 0, 0};
constexpr int kDx[4] = {0, 0, -1, 1};

double max_abs(const std::vector<double>& v) {
  double m = 0;
  for (double x : v) m = std::max(m, std::abs(x));
  return m;
}

double dot(const std::vector<double>& a, const std::vector<double>& b) {
  double s = 0;
  for (std::size_t i = 0; i < a.size(); ++i) s += a[i] * b[i];
  return s;
}

}  // namespace

ChannelSolve solve_poisson_channel(const double* target, const double* source, const float* mask, int h, int w,
                                   double tolerance, int max_iterations) {
  std::vector<int> index(static_cast<std::size_t>(h * w), -1);
  std::vector<int> pixels;
  for (int p = 0; p < h * w; ++p)
    if (mask[p] == 0.0f) {
      index[static_cast<std::size_t>(p)] = static_cast<int>(pixels.size());
      pixels.push_back(p);
    }
  ChannelSolve out;
  out.values.assign(target, target + h * w);
  const auto n = pixels.size();
  if (n == 0) return out;
  if (n == static_cast<std::size_t>(h * w)) throw DomainError("poisson: no known pixel to anchor the boundary");

  // A f = b with A_pp = in-image neighbor count, A_pq = -1 for hole neighbors.
  std::vector<double> diag(n), b(n, 0.0);
  for (std::size_t k = 0; k < n; ++k) {
    const int p = pixels[k], y = p / w, x = p % w;
    for (int d = 0; d < 4; ++d) {
      const int yy = y + kDy[d], xx = x + kDx[d];
      if (yy < 0 || yy >= h || xx < 0 || xx >= w) continue;
      const int q = yy * w + xx;
      diag[k] += 1;
      b[k] += source[p] - source[q];
      if (index[static_cast<std::size_t>(q)] < 0) b[k] += target[q];
    }
  }
  auto apply = [&](const std::vector<double>& f, std::vector<double>& af) {
    for (std::size_t k = 0; k < n; ++k) {
      const int p = pixels[k], y = p / w, x = p % w;
      double v = diag[k] * f[k];
      for (int d = 0; d < 4; ++d) {
        const int yy = y + kDy[d], xx = x + kDx[d];
        if (yy < 0 || yy >= h || xx < 0 || xx >= w) continue;
        const int q = index[static_cast<std::size_t>(yy * w + xx)];
        if (q >= 0) v -= f[static_cast<std::size_t>(q)];
      }
      af[k] = v;
    }
  };

  // Start from the source values.
  std::vector<double> f(n), r(n), pdir(n), ap(n);
  for (std::size_t k = 0; k < n; ++k) f[k] = source[pixels[k]];
  apply(f, ap);
  for (std::size_t k = 0; k < n; ++k) r[k] = b[k] - ap[k];
  pdir = r;
  double rr = dot(r, r);
  int it = 0;
  while (max_abs(r) > tolerance) {
    if (it == max_iterations) break;
    apply(pdir, ap);
    const double alpha = rr / dot(pdir, ap);
    for (std::size_t k = 0; k < n; ++k) {
      f[k] += alpha * pdir[k];
      r[k] -= alpha * ap[k];
    }
    const double rr_new = dot(r, r);
    for (std::size_t k = 0; k < n; ++k) pdir[k] = r[k] + (rr_new / rr) * pdir[k];
    rr = rr_new;
    ++it;
    // refresh the recursive residual now and then to bound drift
    if (it % 50 == 0) {
      apply(f, ap);
      for (std::size_t k = 0; k < n; ++k) r[k] = b[k] - ap[k];
    }
  }
  apply(f, ap);
  for (std::size_t k = 0; k < n; ++k) r[k] = b[k] - ap[k];
  out.residual = max_abs(r);
  out.iterations = it;
  for (std::size_t k = 0; k < n; ++k) out.values[static_cast<std::size_t>(pixels[k])] = f[k];
  return out;
}

BlendResult poisson_blend(const BlendProblem& pb) {
  const auto& ts = pb.target.shape();
  if (ts.size() != 3) throw ShapeError("poisson_blend: target must be [C,H,W], got " + shape_str(ts));
  if (pb.source.shape() != ts)
    throw ShapeError("poisson_blend: source " + shape_str(pb.source.shape()) + " vs target " + shape_str(ts));
  const int c = ts[0], h = ts[1], w = ts[2];
  if (pb.mask.size() != static_cast<std::size_t>(h * w))
    throw ShapeError("poisson_blend: mask " + shape_str(pb.mask.shape()) + " does not cover " + std::to_string(h) + "x" +
                     std::to_string(w));
  BlendResult res{pb.target, 0, 0};
  const auto plane = static_cast<std::size_t>(h * w);
  for (int ch = 0; ch < c; ++ch) {
    std::vector<double> t(plane), s(plane);
    for (std::size_t i = 0; i < plane; ++i) {
      t[i] = pb.target[ch * plane + i];
      s[i] = pb.source[ch * plane + i];
    }
    const auto sol = solve_poisson_channel(t.data(), s.data(), pb.mask.data().data(), h, w, pb.tolerance, pb.max_iterations);
    if (sol.residual > pb.tolerance)
      throw NumericError("poisson_blend: channel " + std::to_string(ch) + " stopped at residual " +
                         std::to_string(sol.residual) + " after " + std::to_string(sol.iterations) + " iterations");
    for (std::size_t i = 0; i < plane; ++i)
      if (pb.mask[i] == 0.0f) res.image[ch * plane + i] = static_cast<float>(sol.values[i]);
    res.iterations = std::max(res.iterations, sol.iterations);
    res.residual = std::max(res.residual, sol.residual);
  }
  return res;
}

}  // namespace anchortune::inference
