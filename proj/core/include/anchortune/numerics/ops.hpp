#pragma once

#include <span>
#include <vector>

#include "anchortune/numerics/tape.hpp"

// Differentiable primitives. Every op checks shapes and reports them in the
// error message. Instantiated for float (training) and double (grad checks).
namespace anchortune::ops {

// Broadcasting binary ops (numpy rules, trailing alignment).
template <typename T> Var<T> add(const Var<T>& a, const Var<T>& b);
template <typename T> Var<T> sub(const Var<T>& a, const Var<T>& b);
template <typename T> Var<T> mul(const Var<T>& a, const Var<T>& b);

// scale * x + shift
template <typename T> Var<T> affine(const Var<T>& x, T scale, T shift);

template <typename T> Var<T> leaky_relu(const Var<T>& x, T slope = T(0.2));
template <typename T> Var<T> tanh(const Var<T>& x);
template <typename T> Var<T> square(const Var<T>& x);
template <typename T> Var<T> abs(const Var<T>& x);
// x^(-1/2); requires x > 0.
template <typename T> Var<T> rsqrt(const Var<T>& x);

template <typename T> Var<T> sum(const Var<T>& x);
template <typename T> Var<T> mean(const Var<T>& x);
// Sums the listed axes, keeping them as extent-1 dimensions.
template <typename T> Var<T> sum_keep(const Var<T>& x, std::vector<int> axes);
// [N,C,H,W] -> [N,C]
template <typename T> Var<T> mean_spatial(const Var<T>& x);

template <typename T> Var<T> reshape(const Var<T>& x, Shape shape);
template <typename T> Var<T> concat(const std::vector<Var<T>>& parts, int axis);
template <typename T> Var<T> slice(const Var<T>& x, int axis, int start, int length);

// [N,C,h,w] -> [N,C,H,W]; H and W must be integer multiples of h and w.
template <typename T> Var<T> resize_nearest(const Var<T>& x, int out_h, int out_w);

// x [N,K], weight [M,K], bias [M] (may be an invalid Var) -> [N,M]
template <typename T> Var<T> linear(const Var<T>& x, const Var<T>& weight, const Var<T>& bias);

// Cross-correlation. weight is [Cout,Cin,kh,kw] shared across the batch, or
// [N,Cout,Cin,kh,kw] with one kernel per sample. bias [Cout] may be invalid.
template <typename T>
Var<T> conv2d(const Var<T>& input, const Var<T>& weight, const Var<T>& bias, int stride, int padding);

// Windowed dot-product attention over a [N,D,h,w] token grid. Keys whose
// validity flag is 0 are excluded (logit -inf). A query whose window has no
// valid key gets a zero output. valid is [N*h*w] in {0,1}.
template <typename T>
Var<T> masked_attention(const Var<T>& q, const Var<T>& k, const Var<T>& v, std::span<const unsigned char> valid,
                        int window);

// Per-query attention weights of the op above, laid out [N, h*w, h*w] with
// zeros outside each query's window. For inspection and tests.
template <typename T>
std::vector<T> attention_weights(const Tensor<T>& q, const Tensor<T>& k, std::span<const unsigned char> valid,
                                 int window);

// Mean squared error over all elements.
template <typename T> Var<T> mse(const Var<T>& a, const Var<T>& b);
// Mean absolute difference over all elements.
template <typename T> Var<T> l1_mean(const Var<T>& a, const Var<T>& b);
// Euclidean norm of a - b over all elements.
template <typename T> Var<T> l2_distance(const Var<T>& a, const Var<T>& b);
// Row-wise cosine similarity of [N,D] inputs -> [N]. Zero-norm rows throw.
template <typename T> Var<T> cosine_similarity(const Var<T>& a, const Var<T>& b);
// Row-wise unit normalization of [N,D]. Rows with norm < min_norm throw.
template <typename T> Var<T> normalize_rows(const Var<T>& x, T min_norm = T(1e-8));
// Per-sample zero-mean / unit-variance over all non-batch axes.
template <typename T> Var<T> standardize(const Var<T>& x, T eps = T(1e-5));
// Mean softmax cross-entropy of [N,K] logits against integer labels.
template <typename T> Var<T> softmax_cross_entropy(const Var<T>& logits, std::span<const int> labels);

}  // namespace anchortune::ops

namespace anchortune {

template <typename T>
inline Var<T> operator+(const Var<T>& a, const Var<T>& b) { return ops::add(a, b); }
template <typename T>
inline Var<T> operator-(const Var<T>& a, const Var<T>& b) { return ops::sub(a, b); }
template <typename T>
inline Var<T> operator*(const Var<T>& a, const Var<T>& b) { return ops::mul(a, b); }

template <typename T>
bool all_finite(std::span<const T> values);

template <typename T>
bool all_finite(const Tensor<T>& t) {
  return all_finite<T>(t.data());
}

}  // namespace anchortune
