#include "anchortune/model/pretrain.hpp"

#include <cmath>

#include "anchortune/config_json.hpp"
#include "anchortune/dataset/mask.hpp"
#include "anchortune/error.hpp"
#include "anchortune/numerics/ops.hpp"
#include "anchortune/numerics/optim.hpp"
#include "anchortune/numerics/random.hpp"

namespace anchortune::model {

void PretrainConfig::validate() const {
  if (steps < 0) throw ConfigError("pretrain.steps must be non-negative");
  if (batch <= 0) throw ConfigError("pretrain.batch must be positive");
  if (!(learning_rate >= 0)) throw ConfigError("pretrain.learning_rate must be non-negative");
  if (!(min_hole > 0 && min_hole <= max_hole && max_hole <= 0.6))
    throw ConfigError("pretrain hole range must satisfy 0 < min_hole <= max_hole <= 0.6");
}

void to_json(nlohmann::json& j, const PretrainConfig& c) {
  j = {{"steps", c.steps},     {"batch", c.batch},       {"learning_rate", c.learning_rate},
       {"min_hole", c.min_hole}, {"max_hole", c.max_hole}, {"seed", c.seed}};
}

void from_json(const nlohmann::json& j, PretrainConfig& c) {
  constexpr std::string_view w = "pretrain";
  cfg::reject_unknown(j, {"steps", "batch", "learning_rate", "min_hole", "max_hole", "seed"}, w);
  cfg::read(j, "steps", c.steps, w);
  cfg::read(j, "batch", c.batch, w);
  cfg::read(j, "learning_rate", c.learning_rate, w);
  cfg::read(j, "min_hole", c.min_hole, w);
  cfg::read(j, "max_hole", c.max_hole, w);
  cfg::read(j, "seed", c.seed, w);
}

TrainingDraw draw_training_problem(const MatConfig& cfg, int n, double min_hole, double max_hole, std::uint64_t seed) {
  auto rng = make_rng(seed, {0x7d});
  const int S = cfg.image_size;
  TrainingDraw d;
  d.masks = Tensor<float>({n, 1, S, S});
  for (int b = 0; b < n; ++b) {
    data::MaskSpec spec;
    spec.kind = uniform(rng, 0, 1) < 0.5 ? data::MaskKind::Rectangle : data::MaskKind::FreeForm;
    spec.hole_fraction = uniform(rng, min_hole, max_hole);
    spec.seed = rng();
    spec.centered = uniform(rng, 0, 1) < 0.5;
    const auto m = data::generate_mask(spec, S);
    std::copy(m.data().begin(), m.data().end(), d.masks.data().begin() + static_cast<std::ptrdiff_t>(b) * S * S);
  }
  d.z = randn<float>({n, cfg.style_dim}, rng);
  d.B = sample_feature_mask<float>(cfg, n, rng());
  return d;
}

Var<float> batch_loss(const MatConfig& cfg, const Bound<float>& p, const FeatureExtractor& fe, Tape<float>& tape,
                      const Tensor<float>& x, const TrainingDraw& draw) {
  const auto xv = tape.constant(x);
  const auto s_u = map_noise(cfg, p, tape.constant(draw.z));
  const auto x_hat = forward(cfg, p, xv, tape.constant(draw.masks), s_u, tape.constant(draw.B));
  return reconstruction_loss(fe, xv, x_hat);
}

namespace {

Tensor<float> gather(const std::vector<Tensor<float>>& images, const std::vector<std::size_t>& idx) {
  std::vector<const Tensor<float>*> items;
  for (auto i : idx) items.push_back(&images[i]);
  return stack(items);
}

}  // namespace

PretrainResult pretrain(MatModel init, const std::vector<Tensor<float>>& images, const FeatureExtractor& fe,
                        const PretrainConfig& cfg, const ProgressFn& progress) {
  cfg.validate();
  if (cfg.steps > 0 && images.empty()) throw DomainError("pretrain: empty image set");
  PretrainResult res{std::move(init), {}};
  auto& model = res.model;
  model.params.set_requires_grad(true);
  Optimizer<float> opt({OptimizerKind::Adam, cfg.learning_rate}, model.params.tensors());
  auto rng = make_rng(cfg.seed, {0x9e7});
  for (int step = 0; step < cfg.steps; ++step) {
    std::vector<std::size_t> idx;
    for (int b = 0; b < cfg.batch; ++b) idx.push_back(static_cast<std::size_t>(rng() % images.size()));
    const auto x = gather(images, idx);
    const auto draw = draw_training_problem(model.config, cfg.batch, cfg.min_hole, cfg.max_hole, rng());
    Tape<float> tape;
    const Bound<float> p(tape, model.params);
    const auto loss = batch_loss(model.config, p, fe, tape, x, draw);
    const double l = loss.value().item();
    if (!std::isfinite(l)) throw NumericError("pretrain: non-finite loss at step " + std::to_string(step));
    tape.backward(loss);
    opt.step();
    res.losses.push_back(l);
    if (progress) progress(step, l);
  }
  return res;
}

double heldout_loss(const MatModel& m, const std::vector<Tensor<float>>& images, const FeatureExtractor& fe,
                    std::uint64_t seed, int batch) {
  if (images.empty()) throw DomainError("heldout_loss: empty image set");
  double total = 0;
  for (std::size_t start = 0; start < images.size(); start += static_cast<std::size_t>(batch)) {
    std::vector<std::size_t> idx;
    for (std::size_t i = start; i < std::min(images.size(), start + batch); ++i) idx.push_back(i);
    const auto x = gather(images, idx);
    const auto draw = draw_training_problem(m.config, static_cast<int>(idx.size()), 0.2, 0.45, seed + start);
    Tape<float> tape;
    const Bound<float> p(tape, m.params);
    total += batch_loss(m.config, p, fe, tape, x, draw).value().item() * static_cast<double>(idx.size());
  }
  return total / static_cast<double>(images.size());
}

}  // namespace anchortune::model
