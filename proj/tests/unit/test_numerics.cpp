#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>

#include "anchortune/numerics/ops.hpp"
#include "anchortune/numerics/optim.hpp"
#include "anchortune/numerics/random.hpp"
#include "gradcheck.hpp"
#include "primitive_cases.hpp"

using namespace anchortune;
using anchortune::testing::grad_check;
using anchortune::testing::project;

namespace {

constexpr double kGradTol = 1e-4;

Tensor<double> rnd(Shape s, std::uint64_t seed, double scale = 1.0) {
  auto rng = make_rng(seed);
  return randn<double>(std::move(s), rng, scale);
}

Shape random_shape(Rng& rng, int max_rank) {
  const int rank = 1 + static_cast<int>(rng() % static_cast<unsigned>(max_rank));
  Shape s;
  for (int i = 0; i < rank; ++i) s.push_back(1 + static_cast<int>(rng() % 4));
  return s;
}

}  // namespace

TEST_CASE("tensor invariants") {
  Tensor<float> t(Shape{2, 3, 4});
  CHECK(t.size() == 24);
  CHECK_THROWS_AS(Tensor<float>(Shape{2, 3}, std::vector<float>(5)), ShapeError);
  CHECK_THROWS_AS(Tensor<float>(Shape{2, 0}), ShapeError);
  t.ensure_grad();
  CHECK(t.grad().size() == t.size());
}

TEST_CASE("conv2d") {
  SUBCASE("1x1 identity kernel reproduces the input") {
    Tape<double> tape;
    auto x = tape.constant(rnd({2, 3, 5, 5}, 1));
    Tensor<double> w(Shape{3, 3, 1, 1});
    for (int c = 0; c < 3; ++c) w[static_cast<std::size_t>(c * 3 + c)] = 1.0;
    auto y = ops::conv2d(x, tape.constant(w), tape.constant(Tensor<double>(Shape{3})), 1, 0);
    CHECK(y.value() == x.value());
  }
  SUBCASE("zero input and zero bias give zero output") {
    Tape<float> tape;
    auto rng = make_rng(3);
    auto y = ops::conv2d(tape.constant(Tensor<float>(Shape{1, 3, 6, 6})), tape.constant(randn<float>({4, 3, 3, 3}, rng)),
                         tape.constant(Tensor<float>(Shape{4})), 1, 1);
    for (float v : y.value().data()) CHECK(v == 0.0f);
  }
  SUBCASE("finite-difference gradient, 1x3x6x6 input and 2x3x3x3 kernel") {
    for (int stride : {1, 2}) {
      auto res = grad_check(
          [stride](Tape<double>&, const std::vector<Var<double>>& in) {
            return project(ops::conv2d(in[0], in[1], in[2], stride, 1));
          },
          {rnd({1, 3, 6, 6}, 10), rnd({2, 3, 3, 3}, 11), rnd({2}, 12)});
      CHECK(res.max_rel_error < kGradTol);
    }
  }
  SUBCASE("per-sample kernels") {
    auto res = grad_check(
        [](Tape<double>&, const std::vector<Var<double>>& in) { return project(ops::conv2d(in[0], in[1], in[2], 1, 1)); },
        {rnd({2, 2, 4, 4}, 20), rnd({2, 3, 2, 3, 3}, 21), rnd({3}, 22)});
    CHECK(res.max_rel_error < kGradTol);
  }
  SUBCASE("shape errors name the shapes") {
    Tape<double> tape;
    auto x = tape.constant(rnd({1, 3, 6, 6}, 1));
    auto w = tape.constant(rnd({2, 4, 3, 3}, 2));
    try {
      ops::conv2d(x, w, Var<double>(), 1, 1);
      FAIL("expected ShapeError");
    } catch (const ShapeError& e) {
      CHECK(std::string(e.what()).find("[1,3,6,6]") != std::string::npos);
      CHECK(std::string(e.what()).find("[2,4,3,3]") != std::string::npos);
    }
    auto big = tape.constant(rnd({2, 3, 9, 9}, 3));
    CHECK_THROWS_AS(ops::conv2d(x, big, Var<double>(), 1, 0), ShapeError);
  }
}

TEST_CASE("primitive gradient suite") {
  SUBCASE("cosine of a vector with itself is one") {
    Tape<double> tape;
    auto v = tape.constant(rnd({3, 7}, 5));
    auto c = ops::cosine_similarity(v, v);
    for (double x : c.value().data()) CHECK(x == doctest::Approx(1.0).epsilon(1e-12));
  }
  SUBCASE("zero-norm vector into cosine is an error") {
    Tape<double> tape;
    auto a = tape.constant(Tensor<double>(Shape{1, 4}));
    auto b = tape.constant(rnd({1, 4}, 1));
    CHECK_THROWS_AS(ops::cosine_similarity(a, b), DomainError);
  }
  SUBCASE("resize of a 1x1 map to 4x4 is constant") {
    Tape<double> tape;
    auto x = tape.constant(Tensor<double>(Shape{1, 2, 1, 1}, std::vector<double>{0.5, -2.0}));
    auto y = ops::resize_nearest(x, 4, 4);
    CHECK(y.shape() == Shape{1, 2, 4, 4});
    for (int i = 0; i < 16; ++i) {
      CHECK(y.value()[static_cast<std::size_t>(i)] == 0.5);
      CHECK(y.value()[static_cast<std::size_t>(16 + i)] == -2.0);
    }
    CHECK_THROWS_AS(ops::resize_nearest(tape.constant(rnd({1, 1, 3, 3}, 1)), 4, 4), ShapeError);
  }

  const auto cases = anchortune::testing::primitive_cases();
  for (const auto& c : cases) {
    CAPTURE(c.name);
    auto res = grad_check(c.fn, c.inputs);
    CHECK(res.max_rel_error < kGradTol);
  }
}

TEST_CASE("broadcast binary ops pass the gradient check on random shapes up to rank 4") {
  auto rng = make_rng(2024);
  for (int trial = 0; trial < 40; ++trial) {
    Shape out = random_shape(rng, 4);
    // Derive a broadcast-compatible partner by collapsing random axes to 1
    // and optionally dropping leading axes.
    Shape other = out;
    for (auto& d : other)
      if (rng() % 2) d = 1;
    const std::size_t drop = rng() % other.size();
    other.erase(other.begin(), other.begin() + static_cast<std::ptrdiff_t>(drop));
    const bool swap = rng() % 2;
    auto a = rnd(swap ? other : out, 100 + static_cast<std::uint64_t>(trial));
    auto b = rnd(swap ? out : other, 200 + static_cast<std::uint64_t>(trial));
    CAPTURE(shape_str(a.shape()));
    CAPTURE(shape_str(b.shape()));
    for (int kind = 0; kind < 3; ++kind) {
      auto res = grad_check(
          [kind](Tape<double>&, const std::vector<Var<double>>& in) {
            return project(kind == 0 ? ops::add(in[0], in[1]) : kind == 1 ? ops::sub(in[0], in[1]) : ops::mul(in[0], in[1]));
          },
          {a, b});
      CHECK(res.max_rel_error < kGradTol);
    }
  }
  Tape<double> tape;
  CHECK_THROWS_AS(ops::add(tape.constant(rnd({2, 3}, 1)), tape.constant(rnd({4, 3}, 2))), ShapeError);
}

TEST_CASE("masked attention") {
  const std::vector<unsigned char> valid{1, 0, 1, 1, 0, 0, 0, 1, 1, 1, 1, 0, 1, 0, 1, 1,
                                         0, 0, 0, 0, 1, 0, 0, 1, 1, 1, 0, 1, 1, 1, 1, 1};
  SUBCASE("gradient") {
    for (int window : {2, 4}) {
      auto res = grad_check(
          [&valid, window](Tape<double>&, const std::vector<Var<double>>& in) {
            return project(ops::masked_attention(in[0], in[1], in[2], valid, window));
          },
          {rnd({2, 3, 4, 4}, 1), rnd({2, 3, 4, 4}, 2), rnd({2, 3, 4, 4}, 3)});
      CHECK(res.max_rel_error < kGradTol);
    }
  }
  SUBCASE("weights over invalid keys are zero and rows sum to one or zero") {
    auto q = rnd({2, 3, 4, 4}, 4), k = rnd({2, 3, 4, 4}, 5);
    auto w = ops::attention_weights(q, k, valid, 2);
    for (int b = 0; b < 2; ++b)
      for (int i = 0; i < 16; ++i) {
        double row = 0, invalid = 0;
        for (int j = 0; j < 16; ++j) {
          const double a = w[static_cast<std::size_t>((b * 16 + i) * 16 + j)];
          row += a;
          if (!valid[static_cast<std::size_t>(b * 16 + j)]) invalid += a;
        }
        CHECK(invalid == 0.0);
        CHECK((std::abs(row - 1.0) < 1e-12 || row == 0.0));
      }
  }
}

TEST_CASE("tape invariants") {
  SUBCASE("backward visits each recorded op once in reverse order and leaves values intact") {
    Tape<double> tape;
    auto x = tape.variable(rnd({2, 3}, 1));
    auto y = ops::tanh(x);
    auto z = ops::mul(y, x);
    auto loss = ops::sum(ops::add(z, y));
    const auto before = z.value();
    tape.backward(loss);
    CHECK(tape.last_visit_order() == std::vector<int>{3, 2, 1, 0});
    CHECK(z.value() == before);
  }
  SUBCASE("backward of a sum of losses equals the sum of separate backward passes") {
    auto rng = make_rng(7);
    Tensor<double> w = randn<double>({3, 4}, rng);
    w.set_requires_grad(true);
    auto x = rnd({2, 4}, 8);
    auto loss1 = [&](Tape<double>& t) { return ops::sum(ops::tanh(ops::linear(t.constant(x), t.param(w), Var<double>()))); };
    auto loss2 = [&](Tape<double>& t) { return ops::mean(ops::square(ops::linear(t.constant(x), t.param(w), Var<double>()))); };
    {
      Tape<double> t;
      t.backward(ops::add(loss1(t), loss2(t)));
    }
    std::vector<double> joint(w.grad().begin(), w.grad().end());
    w.clear_grad();
    {
      Tape<double> t;
      t.backward(loss1(t));
    }
    {
      Tape<double> t;
      t.backward(loss2(t));
    }
    for (std::size_t i = 0; i < joint.size(); ++i) CHECK(joint[i] == doctest::Approx(w.grad()[i]).epsilon(1e-12));
  }
  SUBCASE("identical seeds give bit-identical forward and backward results") {
    auto run = [] {
      auto rng = make_rng(11);
      Tensor<float> w = randn<float>({4, 3, 3, 3}, rng);
      w.set_requires_grad(true);
      auto x = randn<float>({2, 3, 8, 8}, rng);
      Tape<float> t;
      auto y = ops::leaky_relu(ops::conv2d(t.constant(x), t.param(w), Var<float>(), 2, 1), 0.2f);
      auto loss = ops::mean(ops::square(y));
      t.backward(loss);
      std::vector<float> out(y.value().data().begin(), y.value().data().end());
      out.insert(out.end(), w.grad().begin(), w.grad().end());
      return out;
    };
    CHECK(run() == run());
  }
  SUBCASE("constants receive no gradient") {
    Tape<double> tape;
    auto c = tape.constant(rnd({3}, 1));
    auto v = tape.variable(rnd({3}, 2));
    tape.backward(ops::sum(ops::mul(c, v)));
    CHECK(tape.grad_of(c).empty());
    CHECK(tape.grad_of(v).size() == 3);
  }
}

TEST_CASE("optimizer") {
  SUBCASE("zero gradients with fresh moments leave parameters unchanged") {
    for (auto kind : {OptimizerKind::Sgd, OptimizerKind::Adam}) {
      Tensor<double> p(Shape{3}, std::vector<double>{1, 2, 3});
      const auto before = p;
      p.ensure_grad();
      Optimizer<double> opt({kind, 0.1}, {&p});
      opt.step();
      CHECK(p == before);
      CHECK_FALSE(p.has_grad());
    }
  }
  SUBCASE("learning rate zero leaves parameters unchanged") {
    for (auto kind : {OptimizerKind::Sgd, OptimizerKind::Adam}) {
      Tensor<double> p(Shape{2}, std::vector<double>{1, -1});
      const auto before = p;
      auto g = p.ensure_grad();
      g[0] = 0.3;
      g[1] = -4.0;
      Optimizer<double> opt({kind, 0.0}, {&p});
      opt.step();
      CHECK(p == before);
    }
  }
  SUBCASE("adam minimizes (p - 3)^2 from 0 in 500 steps at lr 0.05") {
    Tensor<double> p(Shape{1}, std::vector<double>{0.0});
    p.set_requires_grad(true);
    Optimizer<double> opt({OptimizerKind::Adam, 0.05}, {&p});
    for (int i = 0; i < 500; ++i) {
      Tape<double> t;
      auto v = t.param(p);
      t.backward(ops::square(ops::affine(v, 1.0, -3.0)));
      opt.step();
    }
    CHECK(std::abs(p[0] - 3.0) < 1e-2);
    CHECK(opt.state().step_count == 500);
  }
  SUBCASE("missing gradient is an error") {
    Tensor<double> p(Shape{2});
    Optimizer<double> opt({OptimizerKind::Sgd, 0.1}, {&p});
    CHECK_THROWS_AS(opt.step(), DomainError);
  }
}
