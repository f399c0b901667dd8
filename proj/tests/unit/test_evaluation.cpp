#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <Eigen/Dense>
#include <cmath>
#include <filesystem>
#include <fstream>

#include "anchortune/error.hpp"
#include "anchortune/evaluation/benchmark.hpp"
#include "anchortune/evaluation/frechet.hpp"
#include "anchortune/evaluation/identity_score.hpp"
#include "tiny_fixture.hpp"

using namespace anchortune;
using namespace anchortune::eval;
using testing::image_list;
namespace fs = std::filesystem;

namespace {

// n samples of N(mean, diag(var)) rotated by `rot` (d x d, row-major) when given.
Tensor<double> gaussian(int n, const std::vector<double>& mean, const std::vector<double>& var, std::uint64_t seed,
                        const Eigen::MatrixXd* rot = nullptr) {
  const int d = static_cast<int>(mean.size());
  auto rng = make_rng(seed);
  std::normal_distribution<double> g;
  Tensor<double> t({n, d});
  Eigen::VectorXd v(d);
  for (int i = 0; i < n; ++i) {
    for (int k = 0; k < d; ++k) v(k) = std::sqrt(var[k]) * g(rng);
    if (rot) v = *rot * v;
    for (int k = 0; k < d; ++k) t[static_cast<std::size_t>(i) * d + k] = v(k) + mean[k];
  }
  return t;
}

embed::Embedder tiny_embedder(embed::Role role) {
  auto c = embed::default_embedder_config(role);
  c.image_size = 16;
  c.channels = {4, 8, 8};
  c.penultimate_dim = 8;
  c.embedding_dim = 8;
  return embed::create_embedder(c);
}

double max_abs_diff(const std::vector<double>& a, const Eigen::MatrixXd& b) {
  double m = 0;
  for (int i = 0; i < b.rows(); ++i)
    for (int j = 0; j < b.cols(); ++j) m = std::max(m, std::abs(a[i * b.cols() + j] - b(i, j)));
  return m;
}

}  // namespace

TEST_CASE("psd square root") {
  const std::vector<double> eye{1, 0, 0, 0, 1, 0, 0, 0, 1};
  CHECK(max_abs_diff(matrix_sqrt_psd(eye, 3), Eigen::Matrix3d::Identity()) < 1e-12);
  CHECK(max_abs_diff(matrix_sqrt_psd({4, 0, 0, 9}, 2), Eigen::Vector2d(2, 3).asDiagonal().toDenseMatrix()) < 1e-12);

  auto rng = make_rng(4);
  std::normal_distribution<double> g;
  Eigen::MatrixXd a(5, 5);
  for (int i = 0; i < 25; ++i) a.data()[i] = g(rng);
  const Eigen::MatrixXd psd = a * a.transpose();
  std::vector<double> m(psd.data(), psd.data() + 25);
  const auto r = matrix_sqrt_psd(m, 5);
  Eigen::MatrixXd R(5, 5);
  for (int i = 0; i < 5; ++i)
    for (int j = 0; j < 5; ++j) R(i, j) = r[i * 5 + j];
  CHECK(max_abs_diff(m, R * R) < 1e-9);
  CHECK((R - R.transpose()).cwiseAbs().maxCoeff() < 1e-12);

  CHECK_THROWS_AS(matrix_sqrt_psd({1, 0.5, 0, 1}, 2), DomainError);
  CHECK_THROWS(matrix_sqrt_psd({1, 0, 0}, 2));
}

TEST_CASE("frechet distance") {
  const std::vector<double> mean_a(8, 0.0), var_a{1, 2, 0.5, 1, 3, 1, 0.25, 1};
  const std::vector<double> mean_b{1, 0, -0.5, 0, 0, 2, 0, 0}, var_b{2, 1, 0.5, 4, 1, 1, 1, 0.5};
  const auto a = gaussian(5000, mean_a, var_a, 1);
  const auto b = gaussian(5000, mean_b, var_b, 2);

  SUBCASE("identical sets") { CHECK(std::abs(frechet_distance(a, a)) < 1e-6); }
  SUBCASE("closed form for diagonal gaussians") {
    double expected = 0;
    for (int k = 0; k < 8; ++k) {
      const double dm = mean_a[k] - mean_b[k], ds = std::sqrt(var_a[k]) - std::sqrt(var_b[k]);
      expected += dm * dm + ds * ds;
    }
    const double fd = frechet_distance(a, b);
    CHECK(std::abs(fd - expected) / expected < 0.10);
    CHECK(frechet_distance(b, a) == doctest::Approx(fd).epsilon(1e-9));
  }
  SUBCASE("rotation invariance") {
    auto rng = make_rng(9);
    std::normal_distribution<double> g;
    Eigen::MatrixXd q(8, 8);
    for (int i = 0; i < 64; ++i) q.data()[i] = g(rng);
    const Eigen::MatrixXd rot = Eigen::HouseholderQR<Eigen::MatrixXd>(q).householderQ();
    auto rotate = [&](const Tensor<double>& t) {
      Tensor<double> out(t.shape());
      for (int i = 0; i < t.dim(0); ++i) {
        Eigen::Map<const Eigen::VectorXd> v(t.data().data() + i * 8, 8);
        Eigen::Map<Eigen::VectorXd>(out.data().data() + i * 8, 8) = rot * v;
      }
      return out;
    };
    CHECK(frechet_distance(rotate(a), rotate(b)) == doctest::Approx(frechet_distance(a, b)).epsilon(1e-8));
  }
  SUBCASE("small sample shrinkage") {
    const auto few = gaussian(5, mean_a, var_a, 3);
    const auto m = feature_moments(few);
    CHECK(m.shrunk);
    CHECK(std::isfinite(frechet_distance(few, b)));
    CHECK_THROWS_AS(feature_moments(few, false), NumericError);
    CHECK(!feature_moments(a).shrunk);
  }
}

TEST_CASE("identity score") {
  const auto e = tiny_embedder(embed::Role::Evaluation);
  const auto outs = image_list(3, 16, 5);
  const auto gt = image_list(4, 16, 50);

  std::vector<Tensor<float>> eo, eg;
  for (const auto& x : outs) eo.push_back(embed::embed(e, model::stack<float>({&x})));
  for (const auto& x : gt) eg.push_back(embed::embed(e, model::stack<float>({&x})));
  double oracle = 0;
  for (const auto& p : eo)
    for (const auto& q : eg) {
      double dot = 0, np = 0, nq = 0;
      for (std::size_t k = 0; k < p.size(); ++k) {
        dot += double(p[k]) * q[k];
        np += double(p[k]) * p[k];
        nq += double(q[k]) * q[k];
      }
      oracle += dot / std::sqrt(np * nq);
    }
  oracle /= 12.0;
  const double s = identity_score(e, outs, gt);
  CHECK(s == doctest::Approx(oracle).epsilon(1e-5));

  auto shuffled = gt;
  std::swap(shuffled[0], shuffled[3]);
  CHECK(identity_score(e, outs, shuffled) == doctest::Approx(s).epsilon(1e-9));
  CHECK(identity_score(e, {gt[1]}, {gt[1]}) == doctest::Approx(1.0).epsilon(1e-6));

  CHECK_THROWS(identity_score(e, {}, gt));
  CHECK_THROWS(identity_score(tiny_embedder(embed::Role::Tuning), outs, gt));
  CHECK(frechet_features(e, outs).shape() == Shape{3, 8});
}

TEST_CASE("report files") {
  EvalReport r;
  r.rows = {{"MAT", 12.5, 0.52}, {"PATMAT-C", 3.25, 0.762}};
  r.ground_truth.identity = 0.81;
  r.seeds = {1, 2, 3};
  r.config_digest = digest("cfg");
  r.metrics["leak/PATMAT-C"] = 0.09;
  const auto text = report_json(r);
  const auto back = report_from_json(text);
  CHECK(back.rows == r.rows);
  CHECK(back.metrics == r.metrics);
  CHECK(report_json(back) == text);
  CHECK(digest("cfg").size() == 16);
  CHECK(digest("cfg") != digest("cfh"));

  const auto dir = fs::path(ANCHORTUNE_TEST_TMP) / "report";
  fs::remove_all(dir);
  save_report(dir, r);
  CHECK(fs::exists(dir / "report.json"));
  std::ifstream txt(dir / "report.txt");
  const std::string table(std::istreambuf_iterator<char>(txt), {});
  CHECK(table.find("PATMAT-C") != std::string::npos);

  auto j = nlohmann::json::parse(text);
  j["surprise"] = true;
  CHECK_THROWS_AS(report_from_json(j.dump()), FormatError);
  j = nlohmann::json::parse(text);
  j.erase("rows");
  CHECK_THROWS_AS(report_from_json(j.dump()), FormatError);
}

TEST_CASE("eye mask and leak score") {
  data::ImageRecord rec;
  rec.path = "x.png";
  rec.identity_seed = 77;
  const int S = 32;
  const auto region = eye_region(rec, S);
  const auto mask = eye_hole_mask(rec, S, 2);
  int in_region = 0;
  for (int i = 0; i < S * S; ++i)
    if (region[i] > 0) {
      ++in_region;
      REQUIRE(mask[i] == 0.f);
    }
  CHECK(in_region > 0);
  int holes = 0;
  for (int i = 0; i < S * S; ++i) holes += mask[i] == 0.f;
  CHECK(holes > in_region);

  const auto gt = data::render_face(data::generate_identity(77), rec.nuisance, S);
  CHECK(leak_score({gt}, {gt}, {region}) == 0.0);
  auto darker = gt;
  for (auto& v : darker.data()) v -= 0.2f;
  // luminance lives on [0,1], pixels on [-1,1]
  CHECK(leak_score({darker}, {gt}, {region}) == doctest::Approx(0.1).epsilon(1e-3));
  auto brighter = gt;
  for (auto& v : brighter.data()) v += 0.2f;
  CHECK(leak_score({brighter}, {gt}, {region}) == 0.0);
  CHECK_THROWS_AS(leak_score({}, {}, {}), ShapeError);
}
