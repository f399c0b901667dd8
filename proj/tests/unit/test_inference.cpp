#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>

#include "anchortune/error.hpp"
#include "anchortune/inference/inpaint.hpp"
#include "anchortune/inference/poisson.hpp"
#include "poisson_oracle.hpp"
#include "tiny_fixture.hpp"

using namespace anchortune;
using namespace anchortune::inference;
using testing::dense_solution;
using testing::image_list;
using testing::tiny_config;

namespace {

Tensor<float> smooth_image(int c, int h, int w, double phase) {
  Tensor<float> t({c, h, w});
  for (int k = 0; k < c; ++k)
    for (int y = 0; y < h; ++y)
      for (int x = 0; x < w; ++x)
        t[(static_cast<std::size_t>(k) * h + y) * w + x] =
            static_cast<float>(0.5 * std::sin(0.3 * x + phase * (k + 1)) + 0.3 * std::cos(0.2 * y - phase));
  return t;
}

Tensor<float> noise_image(int c, int h, int w, std::uint64_t seed) {
  auto rng = make_rng(seed);
  return randn<float>({c, h, w}, rng, 0.4);
}

Tensor<float> hole(int h, int w, int y0, int y1, int x0, int x1) {
  Tensor<float> m({1, h, w});
  for (auto& v : m.data()) v = 1.f;
  for (int y = y0; y < y1; ++y)
    for (int x = x0; x < x1; ++x) m[static_cast<std::size_t>(y) * w + x] = 0.f;
  return m;
}

embed::Embedder tiny_embedder(embed::Role role) {
  auto c = embed::default_embedder_config(role);
  c.image_size = 16;
  c.channels = {4, 8, 8};
  c.penultimate_dim = 8;
  c.embedding_dim = 8;
  return embed::create_embedder(c);
}

}  // namespace

TEST_CASE("poisson blend against a dense solve") {
  const int h = 12, w = 14;
  const auto target = noise_image(2, h, w, 1);
  const auto source = noise_image(2, h, w, 2);
  for (const auto& mask : {hole(h, w, 2, 10, 3, 11), hole(h, w, 0, 5, 0, 6), hole(h, w, 2, 12, 9, 14)}) {
    const auto r = poisson_blend({target, source, mask});
    CHECK(r.residual <= 1e-9);
    for (int c = 0; c < 2; ++c) {
      const auto ref = dense_solution(target, source, mask, c);
      double err = 0;
      for (int i = 0; i < h * w; ++i)
        err = std::max(err, std::abs(static_cast<double>(r.image[static_cast<std::size_t>(c) * h * w + i]) - ref[i]));
      CHECK(err < 1e-6);
    }
  }
}

TEST_CASE("poisson blend structural cases") {
  const int h = 16, w = 16;
  const auto target = smooth_image(3, h, w, 0.4);
  const auto mask = hole(h, w, 4, 11, 5, 12);

  SUBCASE("own gradients reproduce the target") {
    const auto r = poisson_blend({target, target, mask});
    for (std::size_t i = 0; i < target.size(); ++i) CHECK(std::abs(r.image[i] - target[i]) < 1e-6);
  }
  SUBCASE("constant offset in the source") {
    auto shifted = target;
    for (auto& v : shifted.data()) v += 0.7f;
    const auto r = poisson_blend({target, shifted, mask});
    for (std::size_t i = 0; i < target.size(); ++i) CHECK(std::abs(r.image[i] - target[i]) < 1e-6);
  }
  SUBCASE("known pixels are copied and blending is idempotent") {
    const auto source = noise_image(3, h, w, 7);
    const auto r = poisson_blend({target, source, mask});
    for (int c = 0; c < 3; ++c)
      for (int i = 0; i < h * w; ++i)
        if (mask[i] > 0.5f) REQUIRE(r.image[static_cast<std::size_t>(c) * h * w + i] == target[c * h * w + i]);
    const auto again = poisson_blend({r.image, source, mask});
    for (std::size_t i = 0; i < r.image.size(); ++i) CHECK(std::abs(again.image[i] - r.image[i]) < 1e-6);
  }
  SUBCASE("failures") {
    auto all_hole = mask;
    for (auto& v : all_hole.data()) v = 0.f;
    CHECK_THROWS_AS(poisson_blend({target, target, all_hole}), DomainError);
    BlendProblem tight{target, noise_image(3, h, w, 8), mask, 1e-12, 2};
    CHECK_THROWS_AS(poisson_blend(tight), NumericError);
    CHECK_THROWS(poisson_blend({target, noise_image(2, h, w, 1), mask}));
  }
}

TEST_CASE("style optimization") {
  const auto m = model::MatModel::create(tiny_config());
  const auto e = tiny_embedder(embed::Role::Tuning);
  const auto imgs = image_list(2, 16, 21);
  auto mask = hole(16, 16, 4, 12, 3, 13);
  const auto B = model::sample_feature_mask<float>(m.config, 1, 4);
  const auto s0 = initial_style(m, nullptr, 9);
  REQUIRE(s0.size() == 8u);
  const auto msum = m.params.checksum(), esum = e.params.checksum();

  const auto none = optimize_style_for_identity(m, imgs[0], mask, imgs[1], e, s0, B, 0, 3.0);
  CHECK(none.s_u == s0);
  REQUIRE(none.losses.size() == 1);
  CHECK(none.best_loss == doctest::Approx(identity_loss(m, e, imgs[0], mask, imgs[1], s0, B)));

  const auto r = optimize_style_for_identity(m, imgs[0], mask, imgs[1], e, s0, B, 10, 3.0);
  CHECK(r.losses.size() == 11);
  CHECK(r.best_loss <= r.losses.front());
  CHECK(r.best_loss == *std::min_element(r.losses.begin(), r.losses.end()));
  CHECK(identity_loss(m, e, imgs[0], mask, imgs[1], r.s_u, B) == doctest::Approx(r.best_loss));
  CHECK(m.params.checksum() == msum);
  CHECK(e.params.checksum() == esum);

  // x_p equal to the composite at s0: embeddings coincide, so the loss vanishes
  InpaintRequest q;
  q.image = &imgs[0];
  q.mask = &mask;
  q.model = &m;
  q.initial_style = &s0;
  q.style.steps = 0;
  q.blend = false;
  q.seed = 4;
  const auto self = inpaint(q).composited;
  CHECK(std::abs(identity_loss(m, e, imgs[0], mask, self, s0, B)) < 1e-6);

  const auto wrong = tiny_embedder(embed::Role::Evaluation);
  CHECK_THROWS(optimize_style_for_identity(m, imgs[0], mask, imgs[1], wrong, s0, B, 2, 3.0));
}

TEST_CASE("initial style picks a reference anchor") {
  const auto m = model::MatModel::create(tiny_config());
  tuning::AnchorStore store;
  for (auto& a : tuning::init_anchors_random(m, 5, 3)) store.add(a);
  const auto s = initial_style(m, &store, 12);
  bool found = false;
  for (const auto& a : store.anchors()) found = found || a.s_u == s;
  CHECK(found);
  CHECK(initial_style(m, &store, 12) == s);
}

TEST_CASE("inpaint request") {
  const auto m = model::MatModel::create(tiny_config());
  const auto e = tiny_embedder(embed::Role::Tuning);
  const auto imgs = image_list(2, 16, 33);
  const auto mask = hole(16, 16, 5, 11, 5, 11);

  InpaintRequest req;
  req.image = &imgs[0];
  req.mask = &mask;
  req.model = &m;
  req.style.steps = 0;
  req.blend = false;
  const auto plain = inpaint(req);
  CHECK(plain.blended.storage() == plain.composited.storage());
  CHECK(std::isnan(plain.identity_loss));
  for (int c = 0; c < 3; ++c)
    for (int i = 0; i < 256; ++i)
      if (mask[i] > 0.5f) REQUIRE(plain.composited[c * 256 + i] == imgs[0][c * 256 + i]);

  req.blend = true;
  req.reference = &imgs[1];
  req.embedder = &e;
  req.style.steps = 4;
  const auto full = inpaint(req);
  CHECK(full.identity_losses.size() == 5);
  CHECK(full.identity_loss <= full.identity_losses.front());
  CHECK(full.solver_residual <= 1e-9);
  CHECK(inpaint(req).blended.storage() == full.blended.storage());
  const auto rec = result_record(full);
  CHECK(rec.contains("identity_loss"));

  req.embedder = nullptr;
  CHECK_THROWS(inpaint(req));
}

TEST_CASE("style config json") {
  StyleOptConfig c;
  c.steps = 7;
  c.start_from_anchor = false;
  nlohmann::json j = c;
  CHECK(nlohmann::json(j.get<StyleOptConfig>()) == j);
  j["x"] = 0;
  CHECK_THROWS_AS(j.get<StyleOptConfig>(), ConfigError);
}
