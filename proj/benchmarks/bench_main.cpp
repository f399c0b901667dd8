#include <benchmark/benchmark.h>

#include "anchortune/evaluation/frechet.hpp"
#include "anchortune/inference/poisson.hpp"
#include "anchortune/model/feature_extractor.hpp"
#include "anchortune/model/mat_lite.hpp"
#include "anchortune/numerics/ops.hpp"
#include "anchortune/numerics/random.hpp"

using namespace anchortune;

namespace {

model::MatConfig bench_config() { return model::MatConfig{}; }  // 32 px defaults

void BM_Conv2d(benchmark::State& state) {
  const int c = static_cast<int>(state.range(0));
  auto rng = make_rng(1);
  const auto x = randn<float>({8, c, 32, 32}, rng);
  const auto w = randn<float>({c, c, 3, 3}, rng, 0.1);
  const auto b = randn<float>({c}, rng);
  for (auto _ : state) {
    Tape<float> tape;
    auto y = ops::conv2d(tape.constant(x), tape.constant(w), tape.constant(b), 1, 1);
    benchmark::DoNotOptimize(y.value().data().data());
  }
  state.SetItemsProcessed(state.iterations() * 8);
}
BENCHMARK(BM_Conv2d)->Arg(16)->Arg(32);

void BM_ForwardBackward(benchmark::State& state) {
  const int n = static_cast<int>(state.range(0));
  const auto cfg = bench_config();
  auto params = model::init_mat_params(cfg);
  const model::FeatureExtractor fe;
  auto rng = make_rng(2);
  const auto x = rand_uniform<float>({n, 3, 32, 32}, rng, -1, 1);
  Tensor<float> mask({n, 1, 32, 32}, 1.0f);
  for (int i = 0; i < n; ++i)
    for (int p = 8 * 32; p < 20 * 32; ++p) mask[static_cast<std::size_t>(i) * 1024 + p] = 0.0f;
  const auto z = randn<float>({n, cfg.style_dim}, rng);
  const auto B = model::sample_feature_mask<float>(cfg, n, 3);
  for (auto _ : state) {
    Tape<float> tape;
    const Bound<float> p(tape, params);
    const auto xv = tape.constant(x);
    const auto y = model::forward(cfg, p, xv, tape.constant(mask), model::map_noise(cfg, p, tape.constant(z)),
                                  tape.constant(B));
    const auto loss = model::reconstruction_loss(fe, xv, y);
    tape.backward(loss);
    params.clear_grads();
  }
  state.SetItemsProcessed(state.iterations() * n);
}
BENCHMARK(BM_ForwardBackward)->Arg(1)->Arg(5)->Unit(benchmark::kMillisecond);

void BM_PoissonBlend(benchmark::State& state) {
  const int s = static_cast<int>(state.range(0));
  auto rng = make_rng(4);
  inference::BlendProblem prob{randn<float>({3, s, s}, rng, 0.5), randn<float>({3, s, s}, rng, 0.5),
                               Tensor<float>({1, s, s}, 1.0f)};
  for (int y = s / 4; y < 3 * s / 4; ++y)
    for (int x = s / 4; x < 3 * s / 4; ++x) prob.mask[static_cast<std::size_t>(y) * s + x] = 0.0f;
  for (auto _ : state) benchmark::DoNotOptimize(inference::poisson_blend(prob).iterations);
}
BENCHMARK(BM_PoissonBlend)->Arg(32)->Arg(64)->Unit(benchmark::kMicrosecond);

void BM_Frechet(benchmark::State& state) {
  const int d = static_cast<int>(state.range(0));
  auto rng = make_rng(5);
  const auto a = randn<double>({2000, d}, rng), b = randn<double>({2000, d}, rng, 1.3);
  for (auto _ : state) benchmark::DoNotOptimize(eval::frechet_distance(a, b));
}
BENCHMARK(BM_Frechet)->Arg(8)->Arg(32)->Unit(benchmark::kMillisecond);

}  // namespace

BENCHMARK_MAIN();
