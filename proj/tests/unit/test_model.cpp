#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <filesystem>

#include "anchortune/dataset/identity.hpp"
#include "anchortune/dataset/mask.hpp"
#include "anchortune/dataset/render.hpp"
#include "anchortune/error.hpp"
#include "anchortune/model/checkpoint.hpp"
#include "anchortune/model/pretrain.hpp"
#include "anchortune/numerics/ops.hpp"
#include "anchortune/numerics/random.hpp"
#include "gradcheck.hpp"
#include "tiny_fixture.hpp"

using namespace anchortune;
using namespace anchortune::model;
using anchortune::testing::grad_check;
namespace fs = std::filesystem;

using testing::image_batch;
using testing::mask_batch;
using testing::rnd;
using testing::tiny_config;
using testing::tiny_fe;

TEST_CASE("config validation") {
  auto c = tiny_config();
  CHECK_NOTHROW(c.validate());
  c.attention_window = 3;
  CHECK_THROWS_AS(c.validate(), ConfigError);
  c = tiny_config();
  c.style_dim = 7;
  CHECK_THROWS_AS(c.validate(), ConfigError);
  nlohmann::json j = tiny_config();
  CHECK(j.get<MatConfig>() == tiny_config());
  j["depth"] = 3;
  CHECK_THROWS_AS(j.get<MatConfig>(), ConfigError);
}

TEST_CASE("map_noise") {
  const auto cfg = tiny_config();
  const auto params = init_mat_params(cfg).cast<double>();
  Tape<double> tape;
  const Bound<double> p(tape, params);
  const auto z = rnd({2, 8}, 1);
  CHECK(map_noise(cfg, p, tape.constant(z)).value() == map_noise(cfg, p, tape.constant(z)).value());

  // z = 0 leaves only the bias path: fc2(lrelu(b1))
  const auto s0 = map_noise(cfg, p, tape.constant(Tensor<double>({1, 8})));
  const auto b1 = tape.constant(Tensor<double>({1, 8}, params["map.fc1.b"].storage()));
  const auto ref = ops::linear(ops::leaky_relu(b1, 0.2), p["map.fc2.w"], p["map.fc2.b"]);
  CHECK(s0.value() == ref.value());

  CHECK_THROWS_AS(map_noise(cfg, p, tape.constant(Tensor<double>({1, 5}))), ShapeError);

  const auto r = grad_check(
      [&](Tape<double>& t, const std::vector<Var<double>>& in) {
        const Bound<double> q(t, params);
        auto w = t.constant(rnd({2, 8}, 2));
        return ops::sum(map_noise(cfg, q, in[0]) * w);
      },
      {z});
  CHECK(r.max_rel_error < 1e-4);
}

TEST_CASE("encode and token validity") {
  const auto cfg = tiny_config();
  const auto params = init_mat_params(cfg).cast<double>();
  Tape<double> tape;
  const Bound<double> p(tape, params);
  const auto x = image_batch<double>(2, 16, 5);
  const auto known = tape.constant(Tensor<double>({2, 1, 16, 16}, 1.0));
  const auto e = encode(cfg, p, ops::mul(tape.constant(x), known), known);
  CHECK(e.features.shape() == Shape{2, 8, 2, 2});
  for (auto v : e.valid_out) CHECK(v == 1);

  const auto holes = tape.constant(Tensor<double>({2, 1, 16, 16}, 0.0));
  CHECK_THROWS_AS(encode(cfg, p, tape.constant(x), holes), DomainError);
  CHECK_THROWS_AS(encode(cfg, p, tape.constant(x), tape.constant(Tensor<double>({2, 1, 8, 8}, 1.0))), ShapeError);

  SUBCASE("window update spreads validity") {
    MatConfig c32;
    c32.attention_window = 2;
    Tensor<float> m({1, 1, 32, 32}, 0.0f);
    m[0] = 1.0f;  // one known pixel in the top-left token
    const auto v = token_validity(m, 4);
    CHECK(std::count(v.begin(), v.end(), 1) == 1);
    const auto big = init_mat_params(c32);
    Tape<float> t;
    const Bound<float> bp(t, big);
    const auto enc = encode(c32, bp, t.constant(Tensor<float>({1, 3, 32, 32})), t.constant(m));
    CHECK(std::count(enc.valid_out.begin(), enc.valid_out.end(), 1) == 4);
    CHECK(enc.valid_out[0] == 1);
    CHECK(enc.valid_out[1] == 1);
    CHECK(enc.valid_out[4] == 1);
    CHECK(enc.valid_out[5] == 1);
  }

  SUBCASE("attention ignores invalid tokens") {
    const auto m = mask_batch<float>(2, 32, 8, 0.5);
    const auto valid = token_validity(m, 4);
    const auto q = rnd({2, 8, 4, 4}, 21), k = rnd({2, 8, 4, 4}, 22);
    const auto w = ops::attention_weights(q, k, valid, 2);
    const int T = 16;
    for (int b = 0; b < 2; ++b)
      for (int i = 0; i < T; ++i) {
        double invalid_mass = 0;
        for (int j = 0; j < T; ++j)
          if (!valid[b * T + j]) invalid_mass += w[(static_cast<std::size_t>(b) * T + i) * T + j];
        CHECK(invalid_mass == 0.0);
      }
  }
}

TEST_CASE("fuse_styles boundary identities") {
  const auto cfg = tiny_config();
  const auto params = init_mat_params(cfg);
  Tape<float> tape;
  const Bound<float> p(tape, params);
  auto rng = make_rng(4);
  const auto X1 = tape.constant(randn<float>({2, 8, 2, 2}, rng));
  const auto X2 = tape.constant(randn<float>({2, 8, 2, 2}, rng));
  const auto su1 = tape.constant(randn<float>({2, 8}, rng));
  const auto su2 = tape.constant(randn<float>({2, 8}, rng));
  const auto ones = tape.constant(Tensor<float>({2, 1, 2, 2}, 1.0f));
  const auto zeros = tape.constant(Tensor<float>({2, 1, 2, 2}, 0.0f));

  CHECK(fuse_styles(cfg, p, X1, ones, su1).s_c.value() == fuse_styles(cfg, p, X1, ones, su2).s_c.value());
  CHECK(fuse_styles(cfg, p, X1, zeros, su1).s_c.value() == fuse_styles(cfg, p, X2, zeros, su1).s_c.value());
  const auto B = tape.constant(sample_feature_mask<float>(cfg, 2, 9));
  const auto a = fuse_styles(cfg, p, X1, B, su1), b = fuse_styles(cfg, p, X1, B, su1);
  CHECK(a.s_c.value() == b.s_c.value());
  for (int l = 0; l < 4; ++l) CHECK(a.s[l].value() == b.s[l].value());
  CHECK(a.s[0].shape() == Shape{2, 8});
  CHECK(a.s[3].shape() == Shape{2, 4});
  CHECK_THROWS_AS(fuse_styles(cfg, p, X1, tape.constant(Tensor<float>({2, 1, 4, 4})), su1), ShapeError);
}

TEST_CASE("modulated_conv") {
  auto rng = make_rng(12);
  Tape<float> tape;
  const auto x = tape.constant(randn<float>({2, 3, 6, 6}, rng));
  const auto W = tape.constant(randn<float>({4, 3, 3, 3}, rng));
  const auto bias = tape.constant(randn<float>({4}, rng));
  const Var<float> none;
  const auto plain = ops::conv2d(x, W, bias, 1, 1);
  CHECK(modulated_conv(x, W, bias, tape.constant(Tensor<float>({2, 3}, 1.0f)), 1, false).value() == plain.value());

  const auto s = tape.constant(rand_uniform<float>({2, 3}, rng, 0.5, 1.5));
  auto s2 = s.value();
  for (auto& v : s2.data()) v *= 2;
  const auto y1 = modulated_conv(x, W, none, s, 1, false).value();
  const auto y2 = modulated_conv(x, W, none, tape.constant(s2), 1, false).value();
  for (std::size_t i = 0; i < y1.size(); ++i) CHECK(y2[i] == 2 * y1[i]);

  // one-hot style: only channel 1 contributes; oracle zeroes the other input channels
  Tensor<float> onehot({2, 3});
  onehot[1] = onehot[4] = 1.0f;
  auto masked = x.value();
  for (int b = 0; b < 2; ++b)
    for (int c : {0, 2})
      for (int i = 0; i < 36; ++i) masked[(b * 3 + c) * 36 + i] = 0.0f;
  const auto got = modulated_conv(x, W, bias, tape.constant(onehot), 1, false).value();
  const auto want = ops::conv2d(tape.constant(masked), W, bias, 1, 1).value();
  for (std::size_t i = 0; i < got.size(); ++i) CHECK(got[i] == doctest::Approx(want[i]).epsilon(1e-6));

  CHECK_THROWS_AS(modulated_conv(x, W, bias, tape.constant(Tensor<float>({2, 4}, 1.0f)), 1, false), ShapeError);

  SUBCASE("gradients with and without demodulation") {
    for (bool demod : {false, true}) {
      const auto r = grad_check(
          [&](Tape<double>& t, const std::vector<Var<double>>& in) {
            return ops::sum(ops::square(modulated_conv(in[0], in[1], in[2], in[3], 1, demod)));
          },
          {rnd({2, 3, 5, 5}, 1), rnd({4, 3, 3, 3}, 2), rnd({4}, 3), rnd({2, 3}, 4)});
      CHECK(r.max_rel_error < 1e-4);
    }
  }
}

TEST_CASE("forward and composite") {
  const auto cfg = tiny_config();
  const auto params = init_mat_params(cfg);
  Tape<float> tape;
  const Bound<float> p(tape, params);
  const auto x = image_batch<float>(2, 16, 3);
  const auto b = mask_batch<float>(2, 16, 4);
  auto rng = make_rng(5);
  const auto su = tape.constant(randn<float>({2, 8}, rng));
  const auto B = tape.constant(sample_feature_mask<float>(cfg, 2, 1));
  const auto y1 = forward(cfg, p, tape.constant(x), tape.constant(b), su, B).value();
  const auto y2 = forward(cfg, p, tape.constant(x), tape.constant(b), su, B).value();
  CHECK(y1 == y2);
  CHECK(y1.shape() == x.shape());
  for (float v : y1.data()) CHECK(std::abs(v) <= 1.0f);

  const auto c = composite(x, y1, b);
  const std::size_t plane = 256;
  for (std::size_t i = 0; i < x.size(); ++i) {
    const float m = b[(i / (3 * plane)) * plane + i % plane];
    CHECK(c[i] == (m == 1.0f ? x[i] : y1[i]));
  }
}

TEST_CASE("reconstruction loss") {
  const auto fe = tiny_fe();
  const auto x = image_batch<double>(2, 16, 7);
  Tape<double> tape;
  const auto xv = tape.constant(x);
  CHECK(reconstruction_loss(fe, xv, xv).value().item() == 0.0);
  auto y = x;
  auto rng = make_rng(3);
  for (auto& v : y.data()) v += 0.2 * std::normal_distribution<double>()(rng);
  const auto yv = tape.constant(y);
  CHECK(reconstruction_loss(fe, xv, yv).value().item() >= ops::mse(yv, xv).value().item());

  const auto r = grad_check(
      [&](Tape<double>& t, const std::vector<Var<double>>& in) { return reconstruction_loss(fe, t.constant(x), in[0]); },
      {y});
  CHECK(r.max_rel_error < 1e-4);
}

TEST_CASE("end-to-end gradient per parameter group") {
  const auto cfg = tiny_config();
  const auto fe = tiny_fe();
  // zero-initialized biases put hole activations exactly on the leaky-relu kink
  auto params = init_mat_params(cfg).cast<double>();
  auto rng = make_rng(77);
  for (auto& e : params.entries())
    if (e.name.ends_with(".b"))
      for (auto& v : e.tensor.data()) v += std::normal_distribution<double>(0.0, 0.05)(rng);
  const auto x = image_batch<double>(1, 16, 9);
  const auto b = mask_batch<double>(1, 16, 2);
  const auto z = rnd({1, 8}, 4);
  const auto B = sample_feature_mask<double>(cfg, 1, 6);

  for (const std::string group : {"map.", "enc.", "attn.", "fuse.F.", "fuse.A", "dec."}) {
    std::vector<std::string> names;
    std::vector<Tensor<double>> inputs;
    for (const auto& e : params.entries())
      // key bias shifts every logit of a query equally; its gradient is exactly zero
      if (e.name.rfind(group, 0) == 0 && e.name != "attn.k.b") {
        names.push_back(e.name);
        inputs.push_back(e.tensor);
      }
    REQUIRE(!names.empty());
    const auto r = grad_check(
        [&](Tape<double>& t, const std::vector<Var<double>>& in) {
          Bound<double> p(t, params);
          for (std::size_t i = 0; i < names.size(); ++i) p.bind(names[i], in[i]);
          const auto xv = t.constant(x);
          const auto y = forward(cfg, p, xv, t.constant(b), map_noise(cfg, p, t.constant(z)), t.constant(B));
          return reconstruction_loss(fe, xv, y);
        },
        inputs);
    INFO(group);
    CHECK(r.max_rel_error < 1e-4);
  }
}

TEST_CASE("checkpoint container") {
  const auto dir = fs::path(ANCHORTUNE_TEST_TMP) / "ckpt";
  fs::remove_all(dir);
  auto m = MatModel::create(tiny_config());
  save_mat(dir / "a.ckpt", m);
  const auto back = load_mat(dir / "a.ckpt");
  CHECK(back.config == m.config);
  CHECK(back.params == m.params);

  const auto bytes = encode_checkpoint("mat_lite", {{"config", m.config}}, m.params);
  auto bad_version = bytes;
  bad_version[4] = 2;
  CHECK_THROWS_AS(decode_checkpoint(bad_version), FormatError);
  CHECK_THROWS_AS(decode_checkpoint(bytes.substr(0, bytes.size() - 3)), FormatError);
  CHECK_THROWS_AS(decode_checkpoint(bytes + "x"), FormatError);

  auto extra = m.params;
  extra.add("dec.extra.w", Tensor<float>({2}));
  save_checkpoint(dir / "extra.ckpt", "mat_lite", {{"config", m.config}}, extra);
  CHECK_THROWS_AS(load_mat(dir / "extra.ckpt"), FormatError);

  ParamSet<float> partial;
  for (const auto& e : m.params.entries())
    if (e.name != "dec.rgb.b") partial.add(e.name, e.tensor);
  save_checkpoint(dir / "partial.ckpt", "mat_lite", {{"config", m.config}}, partial);
  CHECK_THROWS_AS(load_mat(dir / "partial.ckpt"), FormatError);

  save_checkpoint(dir / "emb.ckpt", "embedder", {}, m.params);
  CHECK_THROWS_AS(load_mat(dir / "emb.ckpt"), FormatError);
}

TEST_CASE("pretraining") {
  const auto cfg = tiny_config();
  const auto fe = tiny_fe();
  std::vector<Tensor<float>> images;
  const auto batch = image_batch<float>(12, 16, 30);
  for (int i = 0; i < 12; ++i) images.push_back(unstack(batch, i));

  PretrainConfig pc;
  pc.steps = 0;
  const auto init = MatModel::create(cfg);
  CHECK(pretrain(init, images, fe, pc).model.params == init.params);

  pc.steps = 40;
  pc.batch = 4;
  pc.learning_rate = 3e-3;
  pc.seed = 5;
  const auto a = pretrain(init, images, fe, pc);
  CHECK(a.losses.size() == 40);
  CHECK(a.losses.back() < a.losses.front());
  CHECK(heldout_loss(a.model, images, fe, 1) < heldout_loss(init, images, fe, 1));
  const auto b = pretrain(init, images, fe, pc);
  CHECK(encode_checkpoint("mat_lite", {}, a.model.params) == encode_checkpoint("mat_lite", {}, b.model.params));
}
