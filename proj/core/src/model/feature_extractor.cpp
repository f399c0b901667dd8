#include "anchortune/model/feature_extractor.hpp"

#include <cmath>

#include "anchortune/numerics/ops.hpp"
#include "anchortune/numerics/random.hpp"

namespace anchortune::model {

FeatureExtractor::FeatureExtractor(FeatureExtractorConfig cfg) : cfg_(cfg) {
  auto rng = make_rng(cfg_.seed, {0xfe});
  int cin = 3;
  for (int i = 0; i < 3; ++i) {
    const int cout = cfg_.channels[i];
    const std::string n = "fe." + std::to_string(i);
    params_.add(n + ".w", randn<float>({cout, cin, 3, 3}, rng, std::sqrt(2.0 / (cin * 9))));
    params_.add(n + ".b", rand_uniform<float>({cout}, rng, -0.1, 0.1));
    cin = cout;
  }
  params_.set_requires_grad(false);
  params64_ = params_.cast<double>();
  params64_.set_requires_grad(false);
}

template <typename T>
std::vector<Var<T>> perceptual_features(const FeatureExtractor& fe, const Var<T>& x) {
  const Bound<T> p(x.tape(), fe.params_as<T>());
  std::vector<Var<T>> taps;
  Var<T> h = x;
  for (int i = 0; i < 3; ++i) {
    const std::string n = "fe." + std::to_string(i);
    h = ops::leaky_relu(ops::conv2d(h, p[n + ".w"], p[n + ".b"], i == 0 ? 1 : 2, 1), T(0.2));
    taps.push_back(h);
  }
  return taps;
}

template <typename T>
Var<T> reconstruction_loss(const FeatureExtractor& fe, const Var<T>& x, const Var<T>& x_hat) {
  if (x.shape() != x_hat.shape())
    throw ShapeError("reconstruction_loss: " + shape_str(x.shape()) + " vs " + shape_str(x_hat.shape()));
  const auto fx = perceptual_features(fe, x);
  const auto fy = perceptual_features(fe, x_hat);
  Var<T> loss = ops::mse(x_hat, x);
  for (std::size_t i = 0; i < fx.size(); ++i) loss = loss + ops::l1_mean(fy[i], fx[i]);
  return loss;
}

namespace {

// [N, ...] -> [N], mean over the non-batch axes
template <typename T>
Var<T> mean_per_sample(const Var<T>& v) {
  const auto& s = v.shape();
  const int n = s[0];
  const int per = static_cast<int>(v.value().size()) / n;
  const auto flat = ops::reshape(v, {n, per});
  return ops::affine(ops::reshape(ops::sum_keep(flat, {1}), {n}), T(1) / static_cast<T>(per), T(0));
}

}  // namespace

template <typename T>
Var<T> reconstruction_loss_per_sample(const FeatureExtractor& fe, const Var<T>& x, const Var<T>& x_hat) {
  if (x.shape() != x_hat.shape())
    throw ShapeError("reconstruction_loss: " + shape_str(x.shape()) + " vs " + shape_str(x_hat.shape()));
  const auto fx = perceptual_features(fe, x);
  const auto fy = perceptual_features(fe, x_hat);
  Var<T> loss = mean_per_sample(ops::square(x_hat - x));
  for (std::size_t i = 0; i < fx.size(); ++i) loss = loss + mean_per_sample(ops::abs(fy[i] - fx[i]));
  return loss;
}

template <typename T>
std::vector<double> per_sample_loss(const FeatureExtractor& fe, const Tensor<T>& x, const Tensor<T>& x_hat) {
  Tape<T> tape;
  const auto l = reconstruction_loss_per_sample(fe, tape.constant(x), tape.constant(x_hat));
  return std::vector<double>(l.value().data().begin(), l.value().data().end());
}

template std::vector<Var<float>> perceptual_features(const FeatureExtractor&, const Var<float>&);
template std::vector<Var<double>> perceptual_features(const FeatureExtractor&, const Var<double>&);
template Var<float> reconstruction_loss(const FeatureExtractor&, const Var<float>&, const Var<float>&);
template Var<double> reconstruction_loss(const FeatureExtractor&, const Var<double>&, const Var<double>&);
template Var<float> reconstruction_loss_per_sample(const FeatureExtractor&, const Var<float>&, const Var<float>&);
template Var<double> reconstruction_loss_per_sample(const FeatureExtractor&, const Var<double>&, const Var<double>&);
template std::vector<double> per_sample_loss(const FeatureExtractor&, const Tensor<float>&, const Tensor<float>&);
template std::vector<double> per_sample_loss(const FeatureExtractor&, const Tensor<double>&, const Tensor<double>&);

}  // namespace anchortune::model
