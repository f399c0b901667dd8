#pragma once

#include <array>
#include <cstdint>
#include <type_traits>
#include <vector>

#include "anchortune/numerics/param_set.hpp"

namespace anchortune::model {

// Fixed random-weight conv network standing in for the perceptual network.
// Taps are the activations after each of its three blocks.
struct FeatureExtractorConfig {
  std::array<int, 3> channels{16, 32, 64};
  std::uint64_t seed = 7;
};

class FeatureExtractor {
 public:
  explicit FeatureExtractor(FeatureExtractorConfig cfg = {});

  const FeatureExtractorConfig& config() const noexcept { return cfg_; }
  const ParamSet<float>& params() const noexcept { return params_; }
  const ParamSet<double>& params_f64() const noexcept { return params64_; }

  template <typename T>
  const ParamSet<T>& params_as() const {
    if constexpr (std::is_same_v<T, float>) return params_;
    else return params64_;
  }

 private:
  FeatureExtractorConfig cfg_;
  ParamSet<float> params_;
  ParamSet<double> params64_;
};

// Tap activations of x [N,3,H,W]; the extractor is always frozen.
template <typename T>
std::vector<Var<T>> perceptual_features(const FeatureExtractor& fe, const Var<T>& x);

// Reconstruction loss: sum over taps of mean |phi_i(x_hat) - phi_i(x)| plus mean squared error.
template <typename T>
Var<T> reconstruction_loss(const FeatureExtractor& fe, const Var<T>& x, const Var<T>& x_hat);

// Reconstruction loss per sample, [N]; the mean over samples equals reconstruction_loss up to rounding.
template <typename T>
Var<T> reconstruction_loss_per_sample(const FeatureExtractor& fe, const Var<T>& x, const Var<T>& x_hat);

// Same loss per sample, [N]. Used for per-image diagnostics.
template <typename T>
std::vector<double> per_sample_loss(const FeatureExtractor& fe, const Tensor<T>& x, const Tensor<T>& x_hat);

}  // namespace anchortune::model
