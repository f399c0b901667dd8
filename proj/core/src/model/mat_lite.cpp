#include "anchortune/model/mat_lite.hpp"

#include <cmath>
#include <string>

#include "anchortune/config_json.hpp"
#include "anchortune/error.hpp"
#include "anchortune/numerics/ops.hpp"
#include "anchortune/numerics/random.hpp"

namespace anchortune::model {

void MatConfig::validate() const {
  if (image_size != 16 && image_size != 32 && image_size != 64)
    throw ConfigError("model image_size " + std::to_string(image_size) + " unsupported (16, 32 or 64)");
  for (int c : channels)
    if (c <= 0) throw ConfigError("model channel widths must be positive");
  if (style_dim != channels[3])
    throw ConfigError("style_dim " + std::to_string(style_dim) + " must equal the deepest encoder width " +
                      std::to_string(channels[3]));
  if (mapping_hidden <= 0) throw ConfigError("mapping_hidden must be positive");
  const int h = feature_size();
  if (attention_window <= 0 || h % attention_window != 0)
    throw ConfigError("attention_window " + std::to_string(attention_window) + " must tile the " + std::to_string(h) +
                      "x" + std::to_string(h) + " feature grid");
  if (!(feature_mask_p >= 0 && feature_mask_p <= 1)) throw ConfigError("feature_mask_p outside [0, 1]");
}

void to_json(nlohmann::json& j, const MatConfig& c) {
  j = {{"image_size", c.image_size},   {"style_dim", c.style_dim},
       {"mapping_hidden", c.mapping_hidden}, {"channels", c.channels},
       {"attention_window", c.attention_window}, {"demodulate", c.demodulate},
       {"feature_mask_p", c.feature_mask_p},     {"init_seed", c.init_seed}};
}

void from_json(const nlohmann::json& j, MatConfig& c) {
  constexpr std::string_view where = "model";
  cfg::reject_unknown(j, {"image_size", "style_dim", "mapping_hidden", "channels", "attention_window", "demodulate",
                          "feature_mask_p", "init_seed"},
                      where);
  cfg::read(j, "image_size", c.image_size, where);
  cfg::read(j, "style_dim", c.style_dim, where);
  cfg::read(j, "mapping_hidden", c.mapping_hidden, where);
  cfg::read(j, "channels", c.channels, where);
  cfg::read(j, "attention_window", c.attention_window, where);
  cfg::read(j, "demodulate", c.demodulate, where);
  cfg::read(j, "feature_mask_p", c.feature_mask_p, where);
  cfg::read(j, "init_seed", c.init_seed, where);
}

namespace {

Tensor<float> he(Shape s, int fan_in, Rng& rng, double gain = 1.0) {
  return randn<float>(std::move(s), rng, gain * std::sqrt(2.0 / fan_in));
}

template <typename T>
Var<T> lrelu(const Var<T>& x) {
  return ops::leaky_relu(x, T(0.2));
}

template <typename T>
Var<T> conv(const Bound<T>& p, const std::string& name, const Var<T>& x, int stride, int padding) {
  return ops::conv2d(x, p[name + ".w"], p[name + ".b"], stride, padding);
}

template <typename T>
Var<T> dense(const Bound<T>& p, const std::string& name, const Var<T>& x) {
  return ops::linear(x, p[name + ".w"], p[name + ".b"]);
}

template <typename T>
std::vector<unsigned char> validity_impl(const Tensor<T>& mask, int fs) {
  if (mask.rank() != 4 || mask.dim(1) != 1 || mask.dim(2) != mask.dim(3) || mask.dim(2) % fs != 0)
    throw ShapeError("mask " + shape_str(mask.shape()) + " incompatible with a " + std::to_string(fs) + "x" +
                     std::to_string(fs) + " token grid");
  const int n = mask.dim(0), S = mask.dim(2), patch = S / fs;
  std::vector<unsigned char> v(static_cast<std::size_t>(n) * fs * fs, 0);
  for (int b = 0; b < n; ++b)
    for (int y = 0; y < S; ++y)
      for (int x = 0; x < S; ++x)
        if (mask[(static_cast<std::size_t>(b) * S + y) * S + x] != T(0))
          v[(static_cast<std::size_t>(b) * fs + y / patch) * fs + x / patch] = 1;
  return v;
}

}  // namespace

std::vector<unsigned char> token_validity(const Tensor<float>& mask, int fs) { return validity_impl(mask, fs); }
std::vector<unsigned char> token_validity(const Tensor<double>& mask, int fs) { return validity_impl(mask, fs); }

ParamSet<float> init_mat_params(const MatConfig& cfg) {
  cfg.validate();
  auto rng = make_rng(cfg.init_seed, {0x3a7});
  const auto [c0, c1, c2, c3] = cfg.channels;
  const int d = cfg.style_dim, hid = cfg.mapping_hidden;
  ParamSet<float> p;
  auto zeros = [](int n) { return Tensor<float>({n}); };

  p.add("map.fc1.w", he({hid, d}, d, rng));
  p.add("map.fc1.b", zeros(hid));
  p.add("map.fc2.w", he({d, hid}, hid, rng, 0.5));
  p.add("map.fc2.b", zeros(d));

  p.add("enc.stem.w", he({c0, 4, 3, 3}, 4 * 9, rng));
  p.add("enc.stem.b", zeros(c0));
  p.add("enc.down1.w", he({c1, c0, 3, 3}, c0 * 9, rng));
  p.add("enc.down1.b", zeros(c1));
  p.add("enc.down2.w", he({c2, c1, 3, 3}, c1 * 9, rng));
  p.add("enc.down2.b", zeros(c2));
  p.add("enc.down3.w", he({c3, c2, 3, 3}, c2 * 9, rng));
  p.add("enc.down3.b", zeros(c3));

  for (const char* n : {"q", "k", "v"}) {
    p.add(std::string("attn.") + n + ".w", he({c3, c3, 1, 1}, c3, rng, 0.7));
    p.add(std::string("attn.") + n + ".b", zeros(c3));
  }
  p.add("attn.o.w", he({c3, c3, 1, 1}, c3, rng, 0.1));
  p.add("attn.o.b", zeros(c3));

  p.add("fuse.F.conv.w", he({c3, c3, 3, 3}, c3 * 9, rng));
  p.add("fuse.F.conv.b", zeros(c3));
  p.add("fuse.F.fc.w", he({d, c3}, c3, rng, 0.7));
  p.add("fuse.F.fc.b", zeros(d));
  const auto mod_in = cfg.modulated_inputs();
  for (int l = 0; l < 4; ++l) {
    const std::string n = "fuse.A" + std::to_string(l);
    p.add(n + ".w", randn<float>({mod_in[l], 2 * d}, rng, 0.1 / std::sqrt(2.0 * d)));
    p.add(n + ".b", Tensor<float>({mod_in[l]}, 1.0f));
  }

  p.add("dec.0.w", he({c2, c3, 3, 3}, c3 * 9, rng));
  p.add("dec.0.b", zeros(c2));
  p.add("dec.1.w", he({c1, c2, 3, 3}, c2 * 9, rng));
  p.add("dec.1.b", zeros(c1));
  p.add("dec.2.w", he({c0, c1, 3, 3}, c1 * 9, rng));
  p.add("dec.2.b", zeros(c0));
  p.add("dec.rgb.w", he({3, c0, 1, 1}, c0, rng, 0.5));
  p.add("dec.rgb.b", zeros(3));
  return p;
}

template <typename T>
Var<T> map_noise(const MatConfig& cfg, const Bound<T>& p, const Var<T>& z) {
  if (z.value().rank() != 2 || z.shape()[1] != cfg.style_dim)
    throw ShapeError("map_noise expects z [N," + std::to_string(cfg.style_dim) + "], got " + shape_str(z.shape()));
  if (!all_finite(z.value())) throw DomainError("map_noise: non-finite z");
  return dense(p, "map.fc2", lrelu(dense(p, "map.fc1", z)));
}

template <typename T>
Encoded<T> encode(const MatConfig& cfg, const Bound<T>& p, const Var<T>& x_masked, const Var<T>& mask) {
  const auto& xs = x_masked.shape();
  const int S = cfg.image_size;
  if (xs != Shape{xs.empty() ? 0 : xs[0], 3, S, S})
    throw ShapeError("encode expects image [N,3," + std::to_string(S) + "," + std::to_string(S) + "], got " + shape_str(xs));
  if (mask.shape() != Shape{xs[0], 1, S, S})
    throw ShapeError("mask " + shape_str(mask.shape()) + " does not match image " + shape_str(xs));

  const int n = xs[0], fs = cfg.feature_size(), win = cfg.attention_window;
  Encoded<T> e;
  e.valid_in = token_validity(mask.value(), fs);
  for (int b = 0; b < n; ++b) {
    bool any = false;
    for (int t = 0; t < fs * fs; ++t) any = any || e.valid_in[static_cast<std::size_t>(b) * fs * fs + t];
    if (!any) throw DomainError("encode: sample " + std::to_string(b) + " has no known pixel (all-hole mask)");
  }

  const auto h0 = lrelu(conv(p, "enc.stem", ops::concat<T>({x_masked, mask}, 1), 1, 1));
  const auto h1 = lrelu(conv(p, "enc.down1", h0, 2, 1));
  const auto h2 = lrelu(conv(p, "enc.down2", h1, 2, 1));
  const auto X0 = lrelu(conv(p, "enc.down3", h2, 2, 1));
  e.skips = {h2, h1, h0};

  const auto q = conv(p, "attn.q", X0, 1, 0), k = conv(p, "attn.k", X0, 1, 0), v = conv(p, "attn.v", X0, 1, 0);
  const auto a = ops::masked_attention(q, k, v, std::span<const unsigned char>(e.valid_in), win);
  e.features = X0 + conv(p, "attn.o", a, 1, 0);

  // a window holding any valid token makes all its tokens valid
  e.valid_out = e.valid_in;
  for (int b = 0; b < n; ++b)
    for (int wy = 0; wy < fs; wy += win)
      for (int wx = 0; wx < fs; wx += win) {
        bool any = false;
        for (int y = wy; y < wy + win; ++y)
          for (int x = wx; x < wx + win; ++x) any = any || e.valid_in[(static_cast<std::size_t>(b) * fs + y) * fs + x];
        if (any)
          for (int y = wy; y < wy + win; ++y)
            for (int x = wx; x < wx + win; ++x) e.valid_out[(static_cast<std::size_t>(b) * fs + y) * fs + x] = 1;
      }
  return e;
}

template <typename T>
Styles<T> fuse_styles(const MatConfig& cfg, const Bound<T>& p, const Var<T>& X, const Var<T>& B, const Var<T>& s_u) {
  const auto& xs = X.shape();
  if (xs.size() != 4 || xs[1] != cfg.style_dim) throw ShapeError("fuse_styles: X " + shape_str(xs) + " must be [N,d,h,w]");
  if (B.shape() != Shape{xs[0], 1, xs[2], xs[3]})
    throw ShapeError("fuse_styles: B " + shape_str(B.shape()) + " must be [N,1,h,w] for X " + shape_str(xs));
  if (s_u.shape() != Shape{xs[0], cfg.style_dim})
    throw ShapeError("fuse_styles: s_u " + shape_str(s_u.shape()) + " must be [N,d] for X " + shape_str(xs));

  const auto resized = ops::resize_nearest(ops::reshape(s_u, {xs[0], xs[1], 1, 1}), xs[2], xs[3]);
  const auto Xp = B * X + ops::affine(B, T(-1), T(1)) * resized;
  const auto f = lrelu(conv(p, "fuse.F.conv", Xp, 1, 1));
  Styles<T> st;
  st.s_c = dense(p, "fuse.F.fc", ops::mean_spatial(f));
  const auto both = ops::concat<T>({s_u, st.s_c}, 1);
  for (int l = 0; l < 4; ++l) st.s.push_back(dense(p, "fuse.A" + std::to_string(l), both));
  return st;
}

template <typename T>
Var<T> modulated_conv(const Var<T>& input, const Var<T>& weight, const Var<T>& bias, const Var<T>& s, int padding,
                      bool demodulate) {
  const auto& ws = weight.shape();
  const auto& ss = s.shape();
  if (ws.size() != 4) throw ShapeError("modulated_conv: weight " + shape_str(ws) + " must be [Cout,Cin,kh,kw]");
  if (ss.size() != 2 || ss[1] != ws[1])
    throw ShapeError("modulated_conv: style " + shape_str(ss) + " does not match weight input channels in " + shape_str(ws));
  const int n = ss[0];
  auto wmod = ops::mul(ops::reshape(weight, {1, ws[0], ws[1], ws[2], ws[3]}), ops::reshape(s, {n, 1, ws[1], 1, 1}));
  if (demodulate) wmod = wmod * ops::rsqrt(ops::affine(ops::sum_keep(ops::square(wmod), {2, 3, 4}), T(1), T(1e-8)));
  return ops::conv2d(input, wmod, bias, 1, padding);
}

template <typename T>
Var<T> decode(const MatConfig& cfg, const Bound<T>& p, const Encoded<T>& enc, const Styles<T>& st) {
  Var<T> h = enc.features;
  for (int l = 0; l < 3; ++l) {
    const std::string n = "dec." + std::to_string(l);
    const auto& hs = h.shape();
    h = ops::resize_nearest(h, hs[2] * 2, hs[3] * 2);
    h = lrelu(modulated_conv(h, p[n + ".w"], p[n + ".b"], st.s[l], 1, cfg.demodulate)) + enc.skips[l];
  }
  return ops::tanh(modulated_conv(h, p["dec.rgb.w"], p["dec.rgb.b"], st.s[3], 0, cfg.demodulate));
}

template <typename T>
Var<T> forward(const MatConfig& cfg, const Bound<T>& p, const Var<T>& x, const Var<T>& b, const Var<T>& s_u,
               const Var<T>& B) {
  if (b.shape().size() != 4 || x.shape().size() != 4 || b.shape()[0] != x.shape()[0])
    throw ShapeError("forward: image " + shape_str(x.shape()) + " and mask " + shape_str(b.shape()) + " disagree");
  const auto enc = encode(cfg, p, ops::mul(x, b), b);
  return decode(cfg, p, enc, fuse_styles(cfg, p, enc.features, B, s_u));
}

template <typename T>
Tensor<T> sample_feature_mask(const MatConfig& cfg, int n, std::uint64_t seed) {
  const int fs = cfg.feature_size();
  auto rng = make_rng(seed, {0xb0b});
  Tensor<T> B({n, 1, fs, fs});
  std::bernoulli_distribution keep(cfg.feature_mask_p);
  for (auto& v : B.data()) v = keep(rng) ? T(1) : T(0);
  return B;
}

Tensor<float> composite(const Tensor<float>& x, const Tensor<float>& x_hat, const Tensor<float>& b) {
  if (x.shape() != x_hat.shape()) throw ShapeError("composite: " + shape_str(x.shape()) + " vs " + shape_str(x_hat.shape()));
  const int r = x.rank();
  if (r < 3 || b.rank() != r || b.dim(r - 3) != 1 || b.dim(r - 1) != x.dim(r - 1) || b.dim(r - 2) != x.dim(r - 2) ||
      (r == 4 && b.dim(0) != x.dim(0)))
    throw ShapeError("composite: mask " + shape_str(b.shape()) + " does not fit image " + shape_str(x.shape()));
  const std::size_t plane = static_cast<std::size_t>(x.dim(r - 1)) * x.dim(r - 2);
  const int c = x.dim(r - 3);
  Tensor<float> out(x.shape());
  for (std::size_t i = 0; i < x.size(); ++i) {
    const std::size_t sample = i / (plane * c);
    const float m = b[sample * plane + i % plane];
    out[i] = m == 1.0f ? x[i] : (m == 0.0f ? x_hat[i] : x[i] * m + x_hat[i] * (1.0f - m));
  }
  return out;
}

template <typename T>
Tensor<T> stack(const std::vector<const Tensor<T>*>& items) {
  if (items.empty()) throw ShapeError("stack of zero tensors");
  Shape s = items[0]->shape();
  s.insert(s.begin(), static_cast<int>(items.size()));
  Tensor<T> out(s);
  std::size_t off = 0;
  for (const auto* t : items) {
    if (t->shape() != items[0]->shape())
      throw ShapeError("stack: " + shape_str(t->shape()) + " vs " + shape_str(items[0]->shape()));
    std::copy(t->data().begin(), t->data().end(), out.data().begin() + static_cast<std::ptrdiff_t>(off));
    off += t->size();
  }
  return out;
}

template <typename T>
Tensor<T> unstack(const Tensor<T>& batch, int index) {
  if (batch.rank() < 2 || index < 0 || index >= batch.dim(0))
    throw ShapeError("unstack index " + std::to_string(index) + " of " + shape_str(batch.shape()));
  Shape s(batch.shape().begin() + 1, batch.shape().end());
  const std::size_t n = numel(s);
  return Tensor<T>(s, std::vector<T>(batch.data().begin() + static_cast<std::ptrdiff_t>(index * n),
                                     batch.data().begin() + static_cast<std::ptrdiff_t>((index + 1) * n)));
}

#define ANCHORTUNE_MAT_INSTANTIATE(T)                                                                              \
  template Var<T> map_noise(const MatConfig&, const Bound<T>&, const Var<T>&);                                    \
  template Encoded<T> encode(const MatConfig&, const Bound<T>&, const Var<T>&, const Var<T>&);                    \
  template Styles<T> fuse_styles(const MatConfig&, const Bound<T>&, const Var<T>&, const Var<T>&, const Var<T>&); \
  template Var<T> modulated_conv(const Var<T>&, const Var<T>&, const Var<T>&, const Var<T>&, int, bool);          \
  template Var<T> decode(const MatConfig&, const Bound<T>&, const Encoded<T>&, const Styles<T>&);                 \
  template Var<T> forward(const MatConfig&, const Bound<T>&, const Var<T>&, const Var<T>&, const Var<T>&,         \
                          const Var<T>&);                                                                          \
  template Tensor<T> sample_feature_mask<T>(const MatConfig&, int, std::uint64_t);                                \
  template Tensor<T> stack(const std::vector<const Tensor<T>*>&);                                                 \
  template Tensor<T> unstack(const Tensor<T>&, int);

ANCHORTUNE_MAT_INSTANTIATE(float)
ANCHORTUNE_MAT_INSTANTIATE(double)

}  // namespace anchortune::model
