#pragma once

#include <array>
#include <cstdint>
#include <vector>

#include <json.hpp>

#include "anchortune/numerics/param_set.hpp"

namespace anchortune::model {

struct MatConfig {
  int image_size = 32;
  int style_dim = 64;  // d; equals the deepest encoder width so Resize(s_u) matches X
  int mapping_hidden = 128;
  std::array<int, 4> channels{16, 32, 48, 64};  // stem, down1, down2, down3
  int attention_window = 4;
  bool demodulate = false;
  double feature_mask_p = 0.5;  // P(B = 1) per feature location
  std::uint64_t init_seed = 1;

  void validate() const;
  int feature_size() const { return image_size / 8; }
  // Input-channel counts of the modulated layers (3 decoder blocks + to_rgb).
  std::array<int, 4> modulated_inputs() const { return {channels[3], channels[2], channels[1], channels[0]}; }
  friend bool operator==(const MatConfig&, const MatConfig&) = default;
};

void to_json(nlohmann::json& j, const MatConfig& c);
void from_json(const nlohmann::json& j, MatConfig& c);

ParamSet<float> init_mat_params(const MatConfig& cfg);

template <typename T>
struct Encoded {
  Var<T> features;                     // X after the attention block, [N, d, h, w]
  std::vector<Var<T>> skips;           // encoder maps at S/4, S/2, S (decoder order)
  std::vector<unsigned char> valid_in;   // token validity fed to attention, [N*h*w]
  std::vector<unsigned char> valid_out;  // after the window update
};

template <typename T>
struct Styles {
  Var<T> s_c;             // [N, d]
  std::vector<Var<T>> s;  // per modulated layer, [N, Cin_l]
};

// s_u = fc2(lrelu(fc1(z))), z [N, d].
template <typename T>
Var<T> map_noise(const MatConfig& cfg, const Bound<T>& p, const Var<T>& z);

// x_masked [N,3,S,S] with holes already zeroed, mask [N,1,S,S] (1 = known).
template <typename T>
Encoded<T> encode(const MatConfig& cfg, const Bound<T>& p, const Var<T>& x_masked, const Var<T>& mask);

// X' = B*X + (1-B)*Resize(s_u); s_c = F(X'); s = A(s_u, s_c).
// B is [N,1,h,w] and broadcasts over channels.
template <typename T>
Styles<T> fuse_styles(const MatConfig& cfg, const Bound<T>& p, const Var<T>& X, const Var<T>& B, const Var<T>& s_u);

// W'[n,o,i,...] = W[o,i,...] * s[n,i], then convolution. s [N, Cin].
template <typename T>
Var<T> modulated_conv(const Var<T>& input, const Var<T>& weight, const Var<T>& bias, const Var<T>& s, int padding,
                      bool demodulate);

template <typename T>
Var<T> decode(const MatConfig& cfg, const Bound<T>& p, const Encoded<T>& enc, const Styles<T>& styles);

// x̂ = MAT(x * b, s_u) with feature mask B; x [N,3,S,S], b [N,1,S,S].
template <typename T>
Var<T> forward(const MatConfig& cfg, const Bound<T>& p, const Var<T>& x, const Var<T>& b, const Var<T>& s_u,
               const Var<T>& B);

// Token validity at feature resolution: a token is valid if its patch holds a known pixel.
std::vector<unsigned char> token_validity(const Tensor<float>& mask, int feature_size);
std::vector<unsigned char> token_validity(const Tensor<double>& mask, int feature_size);

// Bernoulli(p) feature mask [n, 1, h, w].
template <typename T = float>
Tensor<T> sample_feature_mask(const MatConfig& cfg, int n, std::uint64_t seed);

// Composite x * b + x̂ * (1 - b).
Tensor<float> composite(const Tensor<float>& x, const Tensor<float>& x_hat, const Tensor<float>& b);

// Stacks equally shaped tensors along a new leading axis.
template <typename T>
Tensor<T> stack(const std::vector<const Tensor<T>*>& items);
template <typename T>
Tensor<T> unstack(const Tensor<T>& batch, int index);

}  // namespace anchortune::model
