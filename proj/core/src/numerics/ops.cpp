#include "anchortune/numerics/ops.hpp"

#include <Eigen/Core>
#include <cmath>
#include <limits>
#include <memory>
#include <string>

namespace anchortune {

template <typename T>
bool all_finite(std::span<const T> values) {
  for (T v : values)
    if (!std::isfinite(v)) return false;
  return true;
}

namespace ops {
namespace {

template <typename T>
using MatR = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
template <typename T>
using MapR = Eigen::Map<MatR<T>>;
template <typename T>
using CMapR = Eigen::Map<const MatR<T>>;

std::string op_error(const char* op, const std::string& msg) { return std::string(op) + ": " + msg; }

void require_rank(const char* op, const char* what, const Shape& s, int rank) {
  if (static_cast<int>(s.size()) != rank)
    throw ShapeError(op_error(op, std::string(what) + " must be rank " + std::to_string(rank) + ", got " +
                                      shape_str(s)));
}

void require_same(const char* op, const Shape& a, const Shape& b) {
  if (a != b) throw ShapeError(op_error(op, "shape mismatch " + shape_str(a) + " vs " + shape_str(b)));
}

std::vector<std::size_t> contiguous_strides(const Shape& s) {
  std::vector<std::size_t> st(s.size(), 1);
  for (std::size_t i = s.size(); i-- > 1;) st[i - 1] = st[i] * static_cast<std::size_t>(s[i]);
  return st;
}

struct BroadcastPlan {
  Shape out;
  std::vector<std::size_t> sa, sb;
};

// Strides of `in` aligned to `out`'s rank, zero along broadcast axes.
std::vector<std::size_t> aligned_strides(const Shape& in, const Shape& out) {
  const std::size_t r = out.size(), ri = in.size();
  auto st = contiguous_strides(in);
  std::vector<std::size_t> res(r, 0);
  for (std::size_t i = 0; i < ri; ++i) res[r - ri + i] = in[i] == 1 ? 0 : st[i];
  return res;
}

BroadcastPlan plan_broadcast(const char* op, const Shape& a, const Shape& b) {
  const std::size_t r = std::max(a.size(), b.size());
  BroadcastPlan p;
  p.out.assign(r, 1);
  for (std::size_t i = 0; i < r; ++i) {
    int da = i >= r - a.size() ? a[i - (r - a.size())] : 1;
    int db = i >= r - b.size() ? b[i - (r - b.size())] : 1;
    if (da != db && da != 1 && db != 1)
      throw ShapeError(op_error(op, "cannot broadcast " + shape_str(a) + " with " + shape_str(b)));
    p.out[i] = std::max(da, db);
  }
  p.sa = aligned_strides(a, p.out);
  p.sb = aligned_strides(b, p.out);
  return p;
}

// Calls f(out_index, a_index, b_index) for every element of `out`, in
// row-major order.
template <typename F>
void for_each_index(const Shape& out, const std::vector<std::size_t>& sa, const std::vector<std::size_t>& sb, F&& f) {
  const std::size_t r = out.size();
  const std::size_t n = numel(out);
  const auto inner = static_cast<std::size_t>(out[r - 1]);
  const std::size_t sai = sa[r - 1], sbi = sb[r - 1];
  std::vector<int> idx(r, 0);
  std::size_t ia = 0, ib = 0;
  for (std::size_t o = 0; o < n; o += inner) {
    for (std::size_t j = 0; j < inner; ++j) f(o + j, ia + j * sai, ib + j * sbi);
    for (std::size_t d = r - 1; d-- > 0;) {
      ++idx[d];
      ia += sa[d];
      ib += sb[d];
      if (idx[d] < out[d]) break;
      ia -= sa[d] * static_cast<std::size_t>(out[d]);
      ib -= sb[d] * static_cast<std::size_t>(out[d]);
      idx[d] = 0;
    }
  }
}

enum class Binary { Add, Sub, Mul };

template <typename T>
Var<T> binary(const Var<T>& a, const Var<T>& b, Binary kind, const char* name) {
  const auto& av = a.value();
  const auto& bv = b.value();
  auto plan = std::make_shared<BroadcastPlan>(plan_broadcast(name, av.shape(), bv.shape()));
  Tensor<T> out(plan->out);
  auto od = out.data();
  auto ad = av.data();
  auto bd = bv.data();
  const bool same = av.shape() == bv.shape();
  switch (kind) {
    case Binary::Add:
      if (same) {
        for (std::size_t i = 0; i < od.size(); ++i) od[i] = ad[i] + bd[i];
      } else {
        for_each_index(plan->out, plan->sa, plan->sb, [&](std::size_t o, std::size_t i, std::size_t j) { od[o] = ad[i] + bd[j]; });
      }
      break;
    case Binary::Sub:
      for_each_index(plan->out, plan->sa, plan->sb, [&](std::size_t o, std::size_t i, std::size_t j) { od[o] = ad[i] - bd[j]; });
      break;
    case Binary::Mul:
      for_each_index(plan->out, plan->sa, plan->sb, [&](std::size_t o, std::size_t i, std::size_t j) { od[o] = ad[i] * bd[j]; });
      break;
  }
  const int ia = a.id(), ib = b.id();
  return a.tape().record(std::move(out), {a, b}, name, [ia, ib, plan, kind](Tape<T>& t, int out_id) {
    auto g = t.grad(out_id);
    const bool ga_on = t.requires_grad(ia), gb_on = t.requires_grad(ib);
    std::span<T> ga = ga_on ? t.grad(ia) : std::span<T>();
    std::span<T> gb = gb_on ? t.grad(ib) : std::span<T>();
    auto ad = t.value(ia).data();
    auto bd = t.value(ib).data();
    for_each_index(plan->out, plan->sa, plan->sb, [&](std::size_t o, std::size_t i, std::size_t j) {
      switch (kind) {
        case Binary::Add:
          if (ga_on) ga[i] += g[o];
          if (gb_on) gb[j] += g[o];
          break;
        case Binary::Sub:
          if (ga_on) ga[i] += g[o];
          if (gb_on) gb[j] -= g[o];
          break;
        case Binary::Mul:
          if (ga_on) ga[i] += g[o] * bd[j];
          if (gb_on) gb[j] += g[o] * ad[i];
          break;
      }
    });
  });
}

// Elementwise unary op with derivative expressed through input x and output y.
template <typename T, typename Fwd, typename Deriv>
Var<T> unary(const Var<T>& x, const char* name, Fwd fwd, Deriv deriv) {
  const auto& xv = x.value();
  Tensor<T> out(xv.shape());
  auto xd = xv.data();
  auto od = out.data();
  for (std::size_t i = 0; i < xd.size(); ++i) od[i] = fwd(xd[i]);
  const int ix = x.id();
  return x.tape().record(std::move(out), {x}, name, [ix, deriv](Tape<T>& t, int out_id) {
    auto g = t.grad(out_id);
    auto gx = t.grad(ix);
    auto xd = t.value(ix).data();
    auto yd = t.value(out_id).data();
    for (std::size_t i = 0; i < g.size(); ++i) gx[i] += g[i] * deriv(xd[i], yd[i]);
  });
}

template <typename T>
void im2col(const T* img, int channels, int h, int w, int kh, int kw, int stride, int pad, int ho, int wo, T* cols) {
  const int hw_out = ho * wo;
  for (int c = 0; c < channels; ++c)
    for (int ki = 0; ki < kh; ++ki)
      for (int kj = 0; kj < kw; ++kj) {
        T* row = cols + static_cast<std::size_t>((c * kh + ki) * kw + kj) * static_cast<std::size_t>(hw_out);
        const T* plane = img + static_cast<std::size_t>(c) * static_cast<std::size_t>(h * w);
        for (int oy = 0; oy < ho; ++oy) {
          const int iy = oy * stride - pad + ki;
          T* dst = row + oy * wo;
          if (iy < 0 || iy >= h) {
            std::fill(dst, dst + wo, T(0));
            continue;
          }
          const T* src = plane + iy * w;
          for (int ox = 0; ox < wo; ++ox) {
            const int ix = ox * stride - pad + kj;
            dst[ox] = (ix >= 0 && ix < w) ? src[ix] : T(0);
          }
        }
      }
}

template <typename T>
void col2im_add(const T* cols, int channels, int h, int w, int kh, int kw, int stride, int pad, int ho, int wo, T* img) {
  const int hw_out = ho * wo;
  for (int c = 0; c < channels; ++c)
    for (int ki = 0; ki < kh; ++ki)
      for (int kj = 0; kj < kw; ++kj) {
        const T* row = cols + static_cast<std::size_t>((c * kh + ki) * kw + kj) * static_cast<std::size_t>(hw_out);
        T* plane = img + static_cast<std::size_t>(c) * static_cast<std::size_t>(h * w);
        for (int oy = 0; oy < ho; ++oy) {
          const int iy = oy * stride - pad + ki;
          if (iy < 0 || iy >= h) continue;
          const T* src = row + oy * wo;
          T* dst = plane + iy * w;
          for (int ox = 0; ox < wo; ++ox) {
            const int ix = ox * stride - pad + kj;
            if (ix >= 0 && ix < w) dst[ix] += src[ox];
          }
        }
      }
}

// Computes softmax attention weights for every window; `weights` is laid out
// per (n, window) as m x m row-major blocks, m = window*window.
template <typename T>
void window_softmax(std::span<const T> q, std::span<const T> k, std::span<const unsigned char> valid, int n_batch,
                    int dim, int h, int w, int window, std::vector<T>& weights) {
  const int m = window * window;
  const int wins_y = h / window, wins_x = w / window;
  const int tokens = h * w;
  const T scale = T(1) / std::sqrt(static_cast<T>(dim));
  weights.assign(static_cast<std::size_t>(n_batch * wins_y * wins_x * m * m), T(0));
  std::vector<int> tok(static_cast<std::size_t>(m));
  std::vector<T> logits(static_cast<std::size_t>(m));
  std::size_t block = 0;
  for (int n = 0; n < n_batch; ++n)
    for (int wy = 0; wy < wins_y; ++wy)
      for (int wx = 0; wx < wins_x; ++wx, ++block) {
        for (int a = 0; a < m; ++a) tok[static_cast<std::size_t>(a)] = (wy * window + a / window) * w + wx * window + a % window;
        T* wb = weights.data() + block * static_cast<std::size_t>(m * m);
        for (int i = 0; i < m; ++i) {
          const int ti = tok[static_cast<std::size_t>(i)];
          T best = -std::numeric_limits<T>::infinity();
          for (int j = 0; j < m; ++j) {
            const int tj = tok[static_cast<std::size_t>(j)];
            if (!valid[static_cast<std::size_t>(n * tokens + tj)]) continue;
            T acc = 0;
            for (int d = 0; d < dim; ++d)
              acc += q[static_cast<std::size_t>((n * dim + d) * tokens + ti)] * k[static_cast<std::size_t>((n * dim + d) * tokens + tj)];
            logits[static_cast<std::size_t>(j)] = acc * scale;
            best = std::max(best, logits[static_cast<std::size_t>(j)]);
          }
          if (best == -std::numeric_limits<T>::infinity()) continue;  // no valid key
          T z = 0;
          for (int j = 0; j < m; ++j) {
            if (!valid[static_cast<std::size_t>(n * tokens + tok[static_cast<std::size_t>(j)])]) continue;
            wb[i * m + j] = std::exp(logits[static_cast<std::size_t>(j)] - best);
            z += wb[i * m + j];
          }
          for (int j = 0; j < m; ++j) wb[i * m + j] /= z;
        }
      }
}

void check_window(const char* op, int h, int w, int window) {
  if (window <= 0 || h % window != 0 || w % window != 0)
    throw ShapeError(op_error(op, "window " + std::to_string(window) + " does not tile token grid " +
                                      std::to_string(h) + "x" + std::to_string(w)));
}

}  // namespace

template <typename T>
Var<T> add(const Var<T>& a, const Var<T>& b) {
  return binary(a, b, Binary::Add, "add");
}
template <typename T>
Var<T> sub(const Var<T>& a, const Var<T>& b) {
  return binary(a, b, Binary::Sub, "sub");
}
template <typename T>
Var<T> mul(const Var<T>& a, const Var<T>& b) {
  return binary(a, b, Binary::Mul, "mul");
}

template <typename T>
Var<T> affine(const Var<T>& x, T scale, T shift) {
  return unary(
      x, "affine", [=](T v) { return scale * v + shift; }, [=](T, T) { return scale; });
}

template <typename T>
Var<T> leaky_relu(const Var<T>& x, T slope) {
  return unary(
      x, "leaky_relu", [=](T v) { return v > 0 ? v : slope * v; }, [=](T v, T) { return v > 0 ? T(1) : slope; });
}

template <typename T>
Var<T> tanh(const Var<T>& x) {
  return unary(
      x, "tanh", [](T v) { return std::tanh(v); }, [](T, T y) { return T(1) - y * y; });
}

template <typename T>
Var<T> square(const Var<T>& x) {
  return unary(
      x, "square", [](T v) { return v * v; }, [](T v, T) { return T(2) * v; });
}

template <typename T>
Var<T> abs(const Var<T>& x) {
  return unary(
      x, "abs", [](T v) { return std::abs(v); }, [](T v, T) { return v > 0 ? T(1) : (v < 0 ? T(-1) : T(0)); });
}

template <typename T>
Var<T> rsqrt(const Var<T>& x) {
  for (T v : x.value().data())
    if (!(v > 0)) throw DomainError("rsqrt: non-positive input in tensor of shape " + shape_str(x.shape()));
  return unary(
      x, "rsqrt", [](T v) { return T(1) / std::sqrt(v); }, [](T v, T y) { return T(-0.5) * y / v; });
}

template <typename T>
Var<T> sum(const Var<T>& x) {
  T acc = 0;
  for (T v : x.value().data()) acc += v;
  const int ix = x.id();
  return x.tape().record(Tensor<T>::scalar(acc), {x}, "sum", [ix](Tape<T>& t, int out_id) {
    const T g = t.grad(out_id)[0];
    for (auto& v : t.grad(ix)) v += g;
  });
}

template <typename T>
Var<T> mean(const Var<T>& x) {
  const auto n = static_cast<T>(x.value().size());
  T acc = 0;
  for (T v : x.value().data()) acc += v;
  const int ix = x.id();
  return x.tape().record(Tensor<T>::scalar(acc / n), {x}, "mean", [ix, n](Tape<T>& t, int out_id) {
    const T g = t.grad(out_id)[0] / n;
    for (auto& v : t.grad(ix)) v += g;
  });
}

template <typename T>
Var<T> sum_keep(const Var<T>& x, std::vector<int> axes) {
  const Shape& xs = x.shape();
  Shape os = xs;
  for (int a : axes) {
    if (a < 0 || a >= static_cast<int>(xs.size()))
      throw ShapeError(op_error("sum_keep", "axis " + std::to_string(a) + " out of range for " + shape_str(xs)));
    os[static_cast<std::size_t>(a)] = 1;
  }
  auto sx = std::make_shared<std::vector<std::size_t>>(contiguous_strides(xs));
  auto so = std::make_shared<std::vector<std::size_t>>(aligned_strides(os, xs));
  Tensor<T> out(os);
  auto od = out.data();
  auto xd = x.value().data();
  for_each_index(xs, *sx, *so, [&](std::size_t, std::size_t i, std::size_t o) { od[o] += xd[i]; });
  const int ix = x.id();
  Shape xs_copy = xs;
  return x.tape().record(std::move(out), {x}, "sum_keep", [ix, sx, so, xs_copy](Tape<T>& t, int out_id) {
    auto g = t.grad(out_id);
    auto gx = t.grad(ix);
    for_each_index(xs_copy, *sx, *so, [&](std::size_t, std::size_t i, std::size_t o) { gx[i] += g[o]; });
  });
}

template <typename T>
Var<T> mean_spatial(const Var<T>& x) {
  require_rank("mean_spatial", "input", x.shape(), 4);
  const Shape& s = x.shape();
  const int n = s[0], c = s[1];
  const std::size_t hw = static_cast<std::size_t>(s[2]) * static_cast<std::size_t>(s[3]);
  Tensor<T> out(Shape{n, c});
  auto xd = x.value().data();
  auto od = out.data();
  for (std::size_t p = 0; p < od.size(); ++p) {
    T acc = 0;
    for (std::size_t i = 0; i < hw; ++i) acc += xd[p * hw + i];
    od[p] = acc / static_cast<T>(hw);
  }
  const int ix = x.id();
  return x.tape().record(std::move(out), {x}, "mean_spatial", [ix, hw](Tape<T>& t, int out_id) {
    auto g = t.grad(out_id);
    auto gx = t.grad(ix);
    for (std::size_t p = 0; p < g.size(); ++p) {
      const T v = g[p] / static_cast<T>(hw);
      for (std::size_t i = 0; i < hw; ++i) gx[p * hw + i] += v;
    }
  });
}

template <typename T>
Var<T> reshape(const Var<T>& x, Shape shape) {
  check_shape(shape);
  if (numel(shape) != x.value().size())
    throw ShapeError(op_error("reshape", "cannot reshape " + shape_str(x.shape()) + " to " + shape_str(shape)));
  Tensor<T> out(std::move(shape), x.value().storage());
  const int ix = x.id();
  return x.tape().record(std::move(out), {x}, "reshape", [ix](Tape<T>& t, int out_id) {
    auto g = t.grad(out_id);
    auto gx = t.grad(ix);
    for (std::size_t i = 0; i < g.size(); ++i) gx[i] += g[i];
  });
}

template <typename T>
Var<T> concat(const std::vector<Var<T>>& parts, int axis) {
  if (parts.empty()) throw ShapeError("concat: no inputs");
  const Shape& s0 = parts[0].shape();
  if (axis < 0 || axis >= static_cast<int>(s0.size()))
    throw ShapeError(op_error("concat", "axis " + std::to_string(axis) + " out of range for " + shape_str(s0)));
  const auto ax = static_cast<std::size_t>(axis);
  Shape os = s0;
  os[ax] = 0;
  for (const auto& p : parts) {
    const Shape& s = p.shape();
    bool ok = s.size() == s0.size();
    for (std::size_t i = 0; ok && i < s.size(); ++i)
      if (i != ax && s[i] != s0[i]) ok = false;
    if (!ok) throw ShapeError(op_error("concat", "incompatible shapes " + shape_str(s0) + " and " + shape_str(s)));
    os[ax] += s[ax];
  }
  std::size_t outer = 1, inner = 1;
  for (std::size_t i = 0; i < ax; ++i) outer *= static_cast<std::size_t>(s0[i]);
  for (std::size_t i = ax + 1; i < s0.size(); ++i) inner *= static_cast<std::size_t>(s0[i]);
  Tensor<T> out(os);
  auto od = out.data();
  const std::size_t out_row = static_cast<std::size_t>(os[ax]) * inner;
  auto offsets = std::make_shared<std::vector<std::size_t>>();
  std::size_t off = 0;
  for (const auto& p : parts) {
    const std::size_t row = static_cast<std::size_t>(p.shape()[ax]) * inner;
    auto pd = p.value().data();
    for (std::size_t o = 0; o < outer; ++o) std::copy_n(pd.begin() + static_cast<std::ptrdiff_t>(o * row), row, od.begin() + static_cast<std::ptrdiff_t>(o * out_row + off));
    offsets->push_back(off);
    off += row;
  }
  std::vector<int> ids;
  for (const auto& p : parts) ids.push_back(p.id());
  return parts[0].tape().record(std::move(out), parts, "concat", [ids, offsets, outer, out_row](Tape<T>& t, int out_id) {
    auto g = t.grad(out_id);
    for (std::size_t k = 0; k < ids.size(); ++k) {
      if (!t.requires_grad(ids[k])) continue;
      auto gp = t.grad(ids[k]);
      const std::size_t row = gp.size() / outer;
      for (std::size_t o = 0; o < outer; ++o)
        for (std::size_t i = 0; i < row; ++i) gp[o * row + i] += g[o * out_row + (*offsets)[k] + i];
    }
  });
}

template <typename T>
Var<T> slice(const Var<T>& x, int axis, int start, int length) {
  const Shape& s = x.shape();
  if (axis < 0 || axis >= static_cast<int>(s.size()) || start < 0 || length <= 0 ||
      start + length > s[static_cast<std::size_t>(axis)])
    throw ShapeError(op_error("slice", "range [" + std::to_string(start) + ", +" + std::to_string(length) +
                                           ") on axis " + std::to_string(axis) + " invalid for " + shape_str(s)));
  const auto ax = static_cast<std::size_t>(axis);
  std::size_t outer = 1, inner = 1;
  for (std::size_t i = 0; i < ax; ++i) outer *= static_cast<std::size_t>(s[i]);
  for (std::size_t i = ax + 1; i < s.size(); ++i) inner *= static_cast<std::size_t>(s[i]);
  Shape os = s;
  os[ax] = length;
  Tensor<T> out(os);
  const std::size_t in_row = static_cast<std::size_t>(s[ax]) * inner;
  const std::size_t out_row = static_cast<std::size_t>(length) * inner;
  const std::size_t off = static_cast<std::size_t>(start) * inner;
  auto xd = x.value().data();
  auto od = out.data();
  for (std::size_t o = 0; o < outer; ++o)
    std::copy_n(xd.begin() + static_cast<std::ptrdiff_t>(o * in_row + off), out_row, od.begin() + static_cast<std::ptrdiff_t>(o * out_row));
  const int ix = x.id();
  return x.tape().record(std::move(out), {x}, "slice", [ix, outer, in_row, out_row, off](Tape<T>& t, int out_id) {
    auto g = t.grad(out_id);
    auto gx = t.grad(ix);
    for (std::size_t o = 0; o < outer; ++o)
      for (std::size_t i = 0; i < out_row; ++i) gx[o * in_row + off + i] += g[o * out_row + i];
  });
}

template <typename T>
Var<T> resize_nearest(const Var<T>& x, int out_h, int out_w) {
  require_rank("resize_nearest", "input", x.shape(), 4);
  const Shape& s = x.shape();
  const int n = s[0], c = s[1], h = s[2], w = s[3];
  if (out_h <= 0 || out_w <= 0 || out_h % h != 0 || out_w % w != 0)
    throw ShapeError(op_error("resize_nearest", "target " + std::to_string(out_h) + "x" + std::to_string(out_w) +
                                                    " is not an integer multiple of " + shape_str(s)));
  const int fy = out_h / h, fx = out_w / w;
  Tensor<T> out(Shape{n, c, out_h, out_w});
  auto xd = x.value().data();
  auto od = out.data();
  const std::size_t planes = static_cast<std::size_t>(n) * static_cast<std::size_t>(c);
  for (std::size_t p = 0; p < planes; ++p)
    for (int y = 0; y < out_h; ++y)
      for (int xx = 0; xx < out_w; ++xx)
        od[(p * static_cast<std::size_t>(out_h) + static_cast<std::size_t>(y)) * static_cast<std::size_t>(out_w) + static_cast<std::size_t>(xx)] =
            xd[(p * static_cast<std::size_t>(h) + static_cast<std::size_t>(y / fy)) * static_cast<std::size_t>(w) + static_cast<std::size_t>(xx / fx)];
  const int ix = x.id();
  return x.tape().record(std::move(out), {x}, "resize_nearest", [=](Tape<T>& t, int out_id) {
    auto g = t.grad(out_id);
    auto gx = t.grad(ix);
    for (std::size_t p = 0; p < planes; ++p)
      for (int y = 0; y < out_h; ++y)
        for (int xx = 0; xx < out_w; ++xx)
          gx[(p * static_cast<std::size_t>(h) + static_cast<std::size_t>(y / fy)) * static_cast<std::size_t>(w) + static_cast<std::size_t>(xx / fx)] +=
              g[(p * static_cast<std::size_t>(out_h) + static_cast<std::size_t>(y)) * static_cast<std::size_t>(out_w) + static_cast<std::size_t>(xx)];
  });
}

template <typename T>
Var<T> linear(const Var<T>& x, const Var<T>& weight, const Var<T>& bias) {
  require_rank("linear", "input", x.shape(), 2);
  require_rank("linear", "weight", weight.shape(), 2);
  const int n = x.shape()[0], k = x.shape()[1], m = weight.shape()[0];
  if (weight.shape()[1] != k)
    throw ShapeError(op_error("linear", "input " + shape_str(x.shape()) + " incompatible with weight " + shape_str(weight.shape())));
  const bool has_bias = bias.valid();
  if (has_bias && bias.shape() != Shape{m})
    throw ShapeError(op_error("linear", "bias " + shape_str(bias.shape()) + " expected [" + std::to_string(m) + "]"));
  Tensor<T> out(Shape{n, m});
  {
    CMapR<T> X(x.value().data().data(), n, k);
    CMapR<T> W(weight.value().data().data(), m, k);
    MapR<T> Y(out.data().data(), n, m);
    Y.noalias() = X * W.transpose();
    if (has_bias) {
      auto bd = bias.value().data();
      for (int i = 0; i < n; ++i)
        for (int j = 0; j < m; ++j) Y(i, j) += bd[static_cast<std::size_t>(j)];
    }
  }
  std::vector<Var<T>> inputs{x, weight};
  if (has_bias) inputs.push_back(bias);
  const int ix = x.id(), iw = weight.id(), ib = has_bias ? bias.id() : -1;
  return x.tape().record(std::move(out), inputs, "linear", [=](Tape<T>& t, int out_id) {
    CMapR<T> G(t.grad(out_id).data(), n, m);
    if (t.requires_grad(ix)) {
      MapR<T> GX(t.grad(ix).data(), n, k);
      GX.noalias() += G * CMapR<T>(t.value(iw).data().data(), m, k);
    }
    if (t.requires_grad(iw)) {
      MapR<T> GW(t.grad(iw).data(), m, k);
      GW.noalias() += G.transpose() * CMapR<T>(t.value(ix).data().data(), n, k);
    }
    if (ib >= 0 && t.requires_grad(ib)) {
      auto gb = t.grad(ib);
      for (int i = 0; i < n; ++i)
        for (int j = 0; j < m; ++j) gb[static_cast<std::size_t>(j)] += G(i, j);
    }
  });
}

template <typename T>
Var<T> conv2d(const Var<T>& input, const Var<T>& weight, const Var<T>& bias, int stride, int padding) {
  const char* op = "conv2d";
  require_rank(op, "input", input.shape(), 4);
  const Shape& is = input.shape();
  const Shape& ws = weight.shape();
  const bool per_sample = ws.size() == 5;
  if (ws.size() != 4 && !per_sample)
    throw ShapeError(op_error(op, "weight must be rank 4 or 5, got " + shape_str(ws)));
  const int n = is[0], cin = is[1], h = is[2], w = is[3];
  const std::size_t o = per_sample ? 1 : 0;
  if (per_sample && ws[0] != n)
    throw ShapeError(op_error(op, "per-sample weight " + shape_str(ws) + " does not match batch of input " + shape_str(is)));
  const int cout = ws[o], kh = ws[o + 2], kw = ws[o + 3];
  if (ws[o + 1] != cin)
    throw ShapeError(op_error(op, "input channels of " + shape_str(is) + " do not match weight " + shape_str(ws)));
  if (stride <= 0 || padding < 0) throw ShapeError(op_error(op, "stride must be positive and padding non-negative"));
  if (h + 2 * padding < kh || w + 2 * padding < kw)
    throw ShapeError(op_error(op, "kernel " + shape_str(ws) + " does not fit padded input " + shape_str(is)));
  const bool has_bias = bias.valid();
  if (has_bias && bias.shape() != Shape{cout})
    throw ShapeError(op_error(op, "bias " + shape_str(bias.shape()) + " expected [" + std::to_string(cout) + "]"));
  const int ho = (h + 2 * padding - kh) / stride + 1;
  const int wo = (w + 2 * padding - kw) / stride + 1;
  const int kdim = cin * kh * kw;
  const int hwo = ho * wo;
  const std::size_t col_size = static_cast<std::size_t>(kdim) * static_cast<std::size_t>(hwo);
  const std::size_t in_size = static_cast<std::size_t>(cin) * static_cast<std::size_t>(h * w);
  const std::size_t out_size = static_cast<std::size_t>(cout) * static_cast<std::size_t>(hwo);
  const std::size_t w_size = static_cast<std::size_t>(cout) * static_cast<std::size_t>(kdim);

  const bool keep_cols = weight.requires_grad();
  auto cols = std::make_shared<std::vector<T>>(keep_cols ? col_size * static_cast<std::size_t>(n) : col_size);
  Tensor<T> out(Shape{n, cout, ho, wo});
  auto xd = input.value().data();
  auto wd = weight.value().data();
  for (int b = 0; b < n; ++b) {
    T* cb = cols->data() + (keep_cols ? static_cast<std::size_t>(b) * col_size : 0);
    im2col(xd.data() + static_cast<std::size_t>(b) * in_size, cin, h, w, kh, kw, stride, padding, ho, wo, cb);
    CMapR<T> W(wd.data() + (per_sample ? static_cast<std::size_t>(b) * w_size : 0), cout, kdim);
    CMapR<T> C(cb, kdim, hwo);
    MapR<T> Y(out.data().data() + static_cast<std::size_t>(b) * out_size, cout, hwo);
    Y.noalias() = W * C;
    if (has_bias) {
      auto bd = bias.value().data();
      for (int c = 0; c < cout; ++c) Y.row(c).array() += bd[static_cast<std::size_t>(c)];
    }
  }
  std::vector<Var<T>> inputs{input, weight};
  if (has_bias) inputs.push_back(bias);
  const int ix = input.id(), iw = weight.id(), ib = has_bias ? bias.id() : -1;
  return input.tape().record(std::move(out), inputs, op, [=](Tape<T>& t, int out_id) {
    auto g = t.grad(out_id);
    const bool gx_on = t.requires_grad(ix), gw_on = t.requires_grad(iw);
    auto wd = t.value(iw).data();
    std::vector<T> gcols(gx_on ? col_size : 0);
    for (int b = 0; b < n; ++b) {
      CMapR<T> G(g.data() + static_cast<std::size_t>(b) * out_size, cout, hwo);
      const std::size_t woff = per_sample ? static_cast<std::size_t>(b) * w_size : 0;
      if (gw_on) {
        MapR<T> GW(t.grad(iw).data() + woff, cout, kdim);
        CMapR<T> C(cols->data() + static_cast<std::size_t>(b) * col_size, kdim, hwo);
        GW.noalias() += G * C.transpose();
      }
      if (gx_on) {
        MapR<T> GC(gcols.data(), kdim, hwo);
        GC.noalias() = CMapR<T>(wd.data() + woff, cout, kdim).transpose() * G;
        col2im_add(gcols.data(), cin, h, w, kh, kw, stride, padding, ho, wo, t.grad(ix).data() + static_cast<std::size_t>(b) * in_size);
      }
      if (ib >= 0 && t.requires_grad(ib)) {
        auto gb = t.grad(ib);
        for (int c = 0; c < cout; ++c) gb[static_cast<std::size_t>(c)] += G.row(c).sum();
      }
    }
  });
}

template <typename T>
std::vector<T> attention_weights(const Tensor<T>& q, const Tensor<T>& k, std::span<const unsigned char> valid,
                                 int window) {
  const char* op = "attention_weights";
  require_rank(op, "query", q.shape(), 4);
  require_same(op, q.shape(), k.shape());
  const int n = q.dim(0), dim = q.dim(1), h = q.dim(2), w = q.dim(3);
  check_window(op, h, w, window);
  if (valid.size() != static_cast<std::size_t>(n * h * w))
    throw ShapeError(op_error(op, "validity mask length " + std::to_string(valid.size()) + " does not match " + shape_str(q.shape())));
  std::vector<T> blocks;
  window_softmax<T>(q.data(), k.data(), valid, n, dim, h, w, window, blocks);
  const int tokens = h * w, m = window * window;
  std::vector<T> full(static_cast<std::size_t>(n) * static_cast<std::size_t>(tokens * tokens), T(0));
  std::size_t block = 0;
  for (int b = 0; b < n; ++b)
    for (int wy = 0; wy < h / window; ++wy)
      for (int wx = 0; wx < w / window; ++wx, ++block)
        for (int i = 0; i < m; ++i)
          for (int j = 0; j < m; ++j) {
            const int ti = (wy * window + i / window) * w + wx * window + i % window;
            const int tj = (wy * window + j / window) * w + wx * window + j % window;
            full[(static_cast<std::size_t>(b) * static_cast<std::size_t>(tokens) + static_cast<std::size_t>(ti)) * static_cast<std::size_t>(tokens) + static_cast<std::size_t>(tj)] =
                blocks[block * static_cast<std::size_t>(m * m) + static_cast<std::size_t>(i * m + j)];
          }
  return full;
}

template <typename T>
Var<T> masked_attention(const Var<T>& q, const Var<T>& k, const Var<T>& v, std::span<const unsigned char> valid,
                        int window) {
  const char* op = "masked_attention";
  require_rank(op, "query", q.shape(), 4);
  require_same(op, q.shape(), k.shape());
  require_same(op, q.shape(), v.shape());
  const int n = q.shape()[0], dim = q.shape()[1], h = q.shape()[2], w = q.shape()[3];
  check_window(op, h, w, window);
  if (valid.size() != static_cast<std::size_t>(n * h * w))
    throw ShapeError(op_error(op, "validity mask length " + std::to_string(valid.size()) + " does not match " + shape_str(q.shape())));
  auto weights = std::make_shared<std::vector<T>>();
  window_softmax<T>(q.value().data(), k.value().data(), valid, n, dim, h, w, window, *weights);
  const int tokens = h * w, m = window * window, wins_y = h / window, wins_x = w / window;
  auto tok = [=](int wy, int wx, int a) { return (wy * window + a / window) * w + wx * window + a % window; };
  auto at = [=](int b, int d, int t) {
    return (static_cast<std::size_t>(b) * static_cast<std::size_t>(dim) + static_cast<std::size_t>(d)) * static_cast<std::size_t>(tokens) + static_cast<std::size_t>(t);
  };
  Tensor<T> out(q.shape());
  auto vd = v.value().data();
  auto od = out.data();
  std::size_t block = 0;
  for (int b = 0; b < n; ++b)
    for (int wy = 0; wy < wins_y; ++wy)
      for (int wx = 0; wx < wins_x; ++wx, ++block) {
        const T* wb = weights->data() + block * static_cast<std::size_t>(m * m);
        for (int i = 0; i < m; ++i)
          for (int j = 0; j < m; ++j) {
            const T a = wb[i * m + j];
            if (a == T(0)) continue;
            for (int d = 0; d < dim; ++d) od[at(b, d, tok(wy, wx, i))] += a * vd[at(b, d, tok(wy, wx, j))];
          }
      }
  const int iq = q.id(), ik = k.id(), iv = v.id();
  const T scale = T(1) / std::sqrt(static_cast<T>(dim));
  return q.tape().record(std::move(out), {q, k, v}, op, [=](Tape<T>& t, int out_id) {
    auto g = t.grad(out_id);
    auto qd = t.value(iq).data();
    auto kd = t.value(ik).data();
    auto vd = t.value(iv).data();
    const bool gq_on = t.requires_grad(iq), gk_on = t.requires_grad(ik), gv_on = t.requires_grad(iv);
    std::span<T> gq = gq_on ? t.grad(iq) : std::span<T>();
    std::span<T> gk = gk_on ? t.grad(ik) : std::span<T>();
    std::span<T> gv = gv_on ? t.grad(iv) : std::span<T>();
    std::vector<T> da(static_cast<std::size_t>(m)), dl(static_cast<std::size_t>(m));
    std::size_t block = 0;
    for (int b = 0; b < n; ++b)
      for (int wy = 0; wy < wins_y; ++wy)
        for (int wx = 0; wx < wins_x; ++wx, ++block) {
          const T* wb = weights->data() + block * static_cast<std::size_t>(m * m);
          for (int i = 0; i < m; ++i) {
            const int ti = tok(wy, wx, i);
            T dot = 0;
            for (int j = 0; j < m; ++j) {
              const T a = wb[i * m + j];
              const int tj = tok(wy, wx, j);
              T acc = 0;
              for (int d = 0; d < dim; ++d) {
                acc += g[at(b, d, ti)] * vd[at(b, d, tj)];
                if (gv_on && a != T(0)) gv[at(b, d, tj)] += a * g[at(b, d, ti)];
              }
              da[static_cast<std::size_t>(j)] = acc;
              dot += a * acc;
            }
            for (int j = 0; j < m; ++j) dl[static_cast<std::size_t>(j)] = wb[i * m + j] * (da[static_cast<std::size_t>(j)] - dot) * scale;
            for (int j = 0; j < m; ++j) {
              const T c = dl[static_cast<std::size_t>(j)];
              if (c == T(0)) continue;
              const int tj = tok(wy, wx, j);
              for (int d = 0; d < dim; ++d) {
                if (gq_on) gq[at(b, d, ti)] += c * kd[at(b, d, tj)];
                if (gk_on) gk[at(b, d, tj)] += c * qd[at(b, d, ti)];
              }
            }
          }
        }
  });
}

template <typename T>
Var<T> mse(const Var<T>& a, const Var<T>& b) {
  require_same("mse", a.shape(), b.shape());
  auto ad = a.value().data();
  auto bd = b.value().data();
  const auto n = static_cast<T>(ad.size());
  T acc = 0;
  for (std::size_t i = 0; i < ad.size(); ++i) acc += (ad[i] - bd[i]) * (ad[i] - bd[i]);
  const int ia = a.id(), ib = b.id();
  return a.tape().record(Tensor<T>::scalar(acc / n), {a, b}, "mse", [=](Tape<T>& t, int out_id) {
    const T g = t.grad(out_id)[0] * T(2) / n;
    auto ad = t.value(ia).data();
    auto bd = t.value(ib).data();
    if (t.requires_grad(ia)) {
      auto ga = t.grad(ia);
      for (std::size_t i = 0; i < ga.size(); ++i) ga[i] += g * (ad[i] - bd[i]);
    }
    if (t.requires_grad(ib)) {
      auto gb = t.grad(ib);
      for (std::size_t i = 0; i < gb.size(); ++i) gb[i] -= g * (ad[i] - bd[i]);
    }
  });
}

template <typename T>
Var<T> l1_mean(const Var<T>& a, const Var<T>& b) {
  require_same("l1_mean", a.shape(), b.shape());
  auto ad = a.value().data();
  auto bd = b.value().data();
  const auto n = static_cast<T>(ad.size());
  T acc = 0;
  for (std::size_t i = 0; i < ad.size(); ++i) acc += std::abs(ad[i] - bd[i]);
  const int ia = a.id(), ib = b.id();
  return a.tape().record(Tensor<T>::scalar(acc / n), {a, b}, "l1_mean", [=](Tape<T>& t, int out_id) {
    const T g = t.grad(out_id)[0] / n;
    auto ad = t.value(ia).data();
    auto bd = t.value(ib).data();
    auto sgn = [](T v) { return v > 0 ? T(1) : (v < 0 ? T(-1) : T(0)); };
    if (t.requires_grad(ia)) {
      auto ga = t.grad(ia);
      for (std::size_t i = 0; i < ga.size(); ++i) ga[i] += g * sgn(ad[i] - bd[i]);
    }
    if (t.requires_grad(ib)) {
      auto gb = t.grad(ib);
      for (std::size_t i = 0; i < gb.size(); ++i) gb[i] -= g * sgn(ad[i] - bd[i]);
    }
  });
}

template <typename T>
Var<T> l2_distance(const Var<T>& a, const Var<T>& b) {
  require_same("l2_distance", a.shape(), b.shape());
  auto ad = a.value().data();
  auto bd = b.value().data();
  T acc = 0;
  for (std::size_t i = 0; i < ad.size(); ++i) acc += (ad[i] - bd[i]) * (ad[i] - bd[i]);
  const T dist = std::sqrt(acc);
  const int ia = a.id(), ib = b.id();
  return a.tape().record(Tensor<T>::scalar(dist), {a, b}, "l2_distance", [=](Tape<T>& t, int out_id) {
    if (dist == T(0)) return;
    const T g = t.grad(out_id)[0] / dist;
    auto ad = t.value(ia).data();
    auto bd = t.value(ib).data();
    if (t.requires_grad(ia)) {
      auto ga = t.grad(ia);
      for (std::size_t i = 0; i < ga.size(); ++i) ga[i] += g * (ad[i] - bd[i]);
    }
    if (t.requires_grad(ib)) {
      auto gb = t.grad(ib);
      for (std::size_t i = 0; i < gb.size(); ++i) gb[i] -= g * (ad[i] - bd[i]);
    }
  });
}

template <typename T>
Var<T> cosine_similarity(const Var<T>& a, const Var<T>& b) {
  const char* op = "cosine_similarity";
  require_rank(op, "input", a.shape(), 2);
  require_same(op, a.shape(), b.shape());
  const int n = a.shape()[0], d = a.shape()[1];
  auto ad = a.value().data();
  auto bd = b.value().data();
  auto stats = std::make_shared<std::vector<T>>(static_cast<std::size_t>(3 * n));  // |a|, |b|, cos
  Tensor<T> out(Shape{n});
  for (int r = 0; r < n; ++r) {
    T na = 0, nb = 0, dot = 0;
    for (int j = 0; j < d; ++j) {
      const std::size_t i = static_cast<std::size_t>(r * d + j);
      na += ad[i] * ad[i];
      nb += bd[i] * bd[i];
      dot += ad[i] * bd[i];
    }
    na = std::sqrt(na);
    nb = std::sqrt(nb);
    if (na == T(0) || nb == T(0))
      throw DomainError(op_error(op, "zero-norm row " + std::to_string(r) + " in input of shape " + shape_str(a.shape())));
    const T c = std::clamp(dot / (na * nb), T(-1), T(1));
    (*stats)[static_cast<std::size_t>(3 * r)] = na;
    (*stats)[static_cast<std::size_t>(3 * r + 1)] = nb;
    (*stats)[static_cast<std::size_t>(3 * r + 2)] = dot / (na * nb);
    out[static_cast<std::size_t>(r)] = c;
  }
  const int ia = a.id(), ib = b.id();
  return a.tape().record(std::move(out), {a, b}, op, [=](Tape<T>& t, int out_id) {
    auto g = t.grad(out_id);
    auto ad = t.value(ia).data();
    auto bd = t.value(ib).data();
    const bool ga_on = t.requires_grad(ia), gb_on = t.requires_grad(ib);
    std::span<T> ga = ga_on ? t.grad(ia) : std::span<T>();
    std::span<T> gb = gb_on ? t.grad(ib) : std::span<T>();
    for (int r = 0; r < n; ++r) {
      const T na = (*stats)[static_cast<std::size_t>(3 * r)], nb = (*stats)[static_cast<std::size_t>(3 * r + 1)];
      const T c = (*stats)[static_cast<std::size_t>(3 * r + 2)];
      const T gr = g[static_cast<std::size_t>(r)];
      for (int j = 0; j < d; ++j) {
        const std::size_t i = static_cast<std::size_t>(r * d + j);
        if (ga_on) ga[i] += gr * (bd[i] / (na * nb) - c * ad[i] / (na * na));
        if (gb_on) gb[i] += gr * (ad[i] / (na * nb) - c * bd[i] / (nb * nb));
      }
    }
  });
}

template <typename T>
Var<T> normalize_rows(const Var<T>& x, T min_norm) {
  const char* op = "normalize_rows";
  require_rank(op, "input", x.shape(), 2);
  const int n = x.shape()[0], d = x.shape()[1];
  auto xd = x.value().data();
  auto norms = std::make_shared<std::vector<T>>(static_cast<std::size_t>(n));
  Tensor<T> out(x.shape());
  for (int r = 0; r < n; ++r) {
    T acc = 0;
    for (int j = 0; j < d; ++j) acc += xd[static_cast<std::size_t>(r * d + j)] * xd[static_cast<std::size_t>(r * d + j)];
    const T nr = std::sqrt(acc);
    if (!(nr >= min_norm))
      throw DomainError(op_error(op, "row " + std::to_string(r) + " has degenerate norm " + std::to_string(static_cast<double>(nr))));
    (*norms)[static_cast<std::size_t>(r)] = nr;
    for (int j = 0; j < d; ++j) out[static_cast<std::size_t>(r * d + j)] = xd[static_cast<std::size_t>(r * d + j)] / nr;
  }
  const int ix = x.id();
  return x.tape().record(std::move(out), {x}, op, [=](Tape<T>& t, int out_id) {
    auto g = t.grad(out_id);
    auto y = t.value(out_id).data();
    auto gx = t.grad(ix);
    for (int r = 0; r < n; ++r) {
      T dot = 0;
      for (int j = 0; j < d; ++j) dot += g[static_cast<std::size_t>(r * d + j)] * y[static_cast<std::size_t>(r * d + j)];
      const T inv = T(1) / (*norms)[static_cast<std::size_t>(r)];
      for (int j = 0; j < d; ++j) {
        const std::size_t i = static_cast<std::size_t>(r * d + j);
        gx[i] += (g[i] - y[i] * dot) * inv;
      }
    }
  });
}

template <typename T>
Var<T> standardize(const Var<T>& x, T eps) {
  const Shape& s = x.shape();
  if (s.size() < 2) throw ShapeError(op_error("standardize", "input must have a batch axis, got " + shape_str(s)));
  const int n = s[0];
  const std::size_t per = x.value().size() / static_cast<std::size_t>(n);
  auto inv_std = std::make_shared<std::vector<T>>(static_cast<std::size_t>(n));
  Tensor<T> out(s);
  auto xd = x.value().data();
  for (int b = 0; b < n; ++b) {
    const std::size_t off = static_cast<std::size_t>(b) * per;
    T mu = 0;
    for (std::size_t i = 0; i < per; ++i) mu += xd[off + i];
    mu /= static_cast<T>(per);
    T var = 0;
    for (std::size_t i = 0; i < per; ++i) var += (xd[off + i] - mu) * (xd[off + i] - mu);
    var /= static_cast<T>(per);
    const T inv = T(1) / std::sqrt(var + eps);
    (*inv_std)[static_cast<std::size_t>(b)] = inv;
    for (std::size_t i = 0; i < per; ++i) out[off + i] = (xd[off + i] - mu) * inv;
  }
  const int ix = x.id();
  return x.tape().record(std::move(out), {x}, "standardize", [=](Tape<T>& t, int out_id) {
    auto g = t.grad(out_id);
    auto y = t.value(out_id).data();
    auto gx = t.grad(ix);
    for (int b = 0; b < n; ++b) {
      const std::size_t off = static_cast<std::size_t>(b) * per;
      T mg = 0, mgy = 0;
      for (std::size_t i = 0; i < per; ++i) {
        mg += g[off + i];
        mgy += g[off + i] * y[off + i];
      }
      mg /= static_cast<T>(per);
      mgy /= static_cast<T>(per);
      const T inv = (*inv_std)[static_cast<std::size_t>(b)];
      for (std::size_t i = 0; i < per; ++i) gx[off + i] += inv * (g[off + i] - mg - y[off + i] * mgy);
    }
  });
}

template <typename T>
Var<T> softmax_cross_entropy(const Var<T>& logits, std::span<const int> labels) {
  const char* op = "softmax_cross_entropy";
  require_rank(op, "logits", logits.shape(), 2);
  const int n = logits.shape()[0], k = logits.shape()[1];
  if (labels.size() != static_cast<std::size_t>(n))
    throw ShapeError(op_error(op, std::to_string(labels.size()) + " labels for logits " + shape_str(logits.shape())));
  auto probs = std::make_shared<std::vector<T>>(static_cast<std::size_t>(n * k));
  auto lab = std::make_shared<std::vector<int>>(labels.begin(), labels.end());
  auto ld = logits.value().data();
  T total = 0;
  for (int r = 0; r < n; ++r) {
    const int y = labels[static_cast<std::size_t>(r)];
    if (y < 0 || y >= k) throw DomainError(op_error(op, "label " + std::to_string(y) + " outside [0, " + std::to_string(k) + ")"));
    T mx = -std::numeric_limits<T>::infinity();
    for (int j = 0; j < k; ++j) mx = std::max(mx, ld[static_cast<std::size_t>(r * k + j)]);
    T z = 0;
    for (int j = 0; j < k; ++j) {
      const T e = std::exp(ld[static_cast<std::size_t>(r * k + j)] - mx);
      (*probs)[static_cast<std::size_t>(r * k + j)] = e;
      z += e;
    }
    for (int j = 0; j < k; ++j) (*probs)[static_cast<std::size_t>(r * k + j)] /= z;
    total += -(ld[static_cast<std::size_t>(r * k + y)] - mx - std::log(z));
  }
  const int il = logits.id();
  return logits.tape().record(Tensor<T>::scalar(total / static_cast<T>(n)), {logits}, op, [=](Tape<T>& t, int out_id) {
    const T g = t.grad(out_id)[0] / static_cast<T>(n);
    auto gl = t.grad(il);
    for (int r = 0; r < n; ++r)
      for (int j = 0; j < k; ++j) {
        const std::size_t i = static_cast<std::size_t>(r * k + j);
        gl[i] += g * ((*probs)[i] - (j == (*lab)[static_cast<std::size_t>(r)] ? T(1) : T(0)));
      }
  });
}

#define ANCHORTUNE_INSTANTIATE_OPS(T)                                                                        \
  template Var<T> add(const Var<T>&, const Var<T>&);                                                         \
  template Var<T> sub(const Var<T>&, const Var<T>&);                                                         \
  template Var<T> mul(const Var<T>&, const Var<T>&);                                                         \
  template Var<T> affine(const Var<T>&, T, T);                                                               \
  template Var<T> leaky_relu(const Var<T>&, T);                                                              \
  template Var<T> tanh(const Var<T>&);                                                                       \
  template Var<T> square(const Var<T>&);                                                                     \
  template Var<T> abs(const Var<T>&);                                                                        \
  template Var<T> rsqrt(const Var<T>&);                                                                      \
  template Var<T> sum(const Var<T>&);                                                                        \
  template Var<T> mean(const Var<T>&);                                                                       \
  template Var<T> sum_keep(const Var<T>&, std::vector<int>);                                                 \
  template Var<T> mean_spatial(const Var<T>&);                                                               \
  template Var<T> reshape(const Var<T>&, Shape);                                                             \
  template Var<T> concat(const std::vector<Var<T>>&, int);                                                   \
  template Var<T> slice(const Var<T>&, int, int, int);                                                       \
  template Var<T> resize_nearest(const Var<T>&, int, int);                                                   \
  template Var<T> linear(const Var<T>&, const Var<T>&, const Var<T>&);                                       \
  template Var<T> conv2d(const Var<T>&, const Var<T>&, const Var<T>&, int, int);                             \
  template Var<T> masked_attention(const Var<T>&, const Var<T>&, const Var<T>&, std::span<const unsigned char>, \
                                   int);                                                                     \
  template std::vector<T> attention_weights(const Tensor<T>&, const Tensor<T>&, std::span<const unsigned char>, \
                                            int);                                                            \
  template Var<T> mse(const Var<T>&, const Var<T>&);                                                         \
  template Var<T> l1_mean(const Var<T>&, const Var<T>&);                                                     \
  template Var<T> l2_distance(const Var<T>&, const Var<T>&);                                                 \
  template Var<T> cosine_similarity(const Var<T>&, const Var<T>&);                                           \
  template Var<T> normalize_rows(const Var<T>&, T);                                                          \
  template Var<T> standardize(const Var<T>&, T);                                                             \
  template Var<T> softmax_cross_entropy(const Var<T>&, std::span<const int>);

ANCHORTUNE_INSTANTIATE_OPS(float)
ANCHORTUNE_INSTANTIATE_OPS(double)

#undef ANCHORTUNE_INSTANTIATE_OPS

}  // namespace ops

template bool all_finite(std::span<const float>);
template bool all_finite(std::span<const double>);

}  // namespace anchortune
