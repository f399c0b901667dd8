#include "anchortune/inference/inpaint.hpp"

#include <cmath>
#include <limits>

#include "anchortune/config_json.hpp"
#include "anchortune/dataset/mask.hpp"
#include "anchortune/error.hpp"
#include "anchortune/numerics/ops.hpp"
#include "anchortune/numerics/random.hpp"

namespace anchortune::inference {

using nlohmann::json;

void StyleOptConfig::validate() const {
  if (steps < 0) throw ConfigError("style.steps must be non-negative");
  if (!(learning_rate >= 0)) throw ConfigError("style.learning_rate must be non-negative");
  if (restarts < 1) throw ConfigError("style.restarts must be at least 1");
}

void to_json(json& j, const StyleOptConfig& c) {
  j = {{"steps", c.steps},
       {"learning_rate", c.learning_rate},
       {"start_from_anchor", c.start_from_anchor},
       {"restarts", c.restarts}};
}

void from_json(const json& j, StyleOptConfig& c) {
  constexpr std::string_view w = "style";
  cfg::reject_unknown(j, {"steps", "learning_rate", "start_from_anchor", "restarts"}, w);
  cfg::read(j, "steps", c.steps, w);
  cfg::read(j, "learning_rate", c.learning_rate, w);
  cfg::read(j, "start_from_anchor", c.start_from_anchor, w);
  cfg::read(j, "restarts", c.restarts, w);
}

namespace {

void require_tuning_role(const embed::Embedder& e) {
  if (e.config.role != embed::Role::Tuning)
    throw DomainError("style optimization needs the tuning-role embedder, got role '" +
                      std::string(embed::to_string(e.config.role)) + "'");
}

Tensor<float> batch1(const Tensor<float>& t, int c, int s) {
  Tensor<float> out = t;
  out.reshape({1, c, s, s});
  return out;
}

struct Eval {
  double loss;
  std::vector<float> grad;
};

// Loss at s_u and, when asked, its gradient with respect to s_u.
Eval evaluate(const model::MatModel& m, const embed::Embedder& e, const Tensor<float>& x, const Tensor<float>& b,
              const Tensor<float>& target, const std::vector<float>& s_u, const Tensor<float>& B, bool want_grad) {
  Tape<float> tape;
  const Bound<float> p(tape, std::as_const(m.params));
  const Bound<float> pe(tape, std::as_const(e.params));
  Tensor<float> inv_b = b;
  for (auto& v : inv_b.data()) v = 1.0f - v;
  Tensor<float> known = x;
  const int S = m.config.image_size;
  for (int c = 0; c < 3; ++c)
    for (int i = 0; i < S * S; ++i) known[c * S * S + i] *= b[i];
  const auto s = want_grad ? tape.variable(Tensor<float>({1, static_cast<int>(s_u.size())}, s_u))
                           : tape.constant(Tensor<float>({1, static_cast<int>(s_u.size())}, s_u));
  const auto x_hat = model::forward(m.config, p, tape.constant(x), tape.constant(b), s, tape.constant(B));
  Tensor<float> inv3({1, 3, S, S});
  for (int c = 0; c < 3; ++c)
    for (int i = 0; i < S * S; ++i) inv3[c * S * S + i] = inv_b[i];
  const auto comp = tape.constant(known) + x_hat * tape.constant(inv3);
  const auto emb = embed::embed_graph(e.config, pe, comp).embedding;
  const auto loss = ops::sum(ops::affine(ops::cosine_similarity(emb, tape.constant(target)), -1.0f, 1.0f));
  Eval out{loss.value().item(), {}};
  if (want_grad && std::isfinite(out.loss)) {
    tape.backward(loss);
    const auto g = tape.grad_of(s);
    out.grad.assign(g.begin(), g.end());
    if (out.grad.empty()) out.grad.assign(s_u.size(), 0.0f);
  }
  return out;
}

}  // namespace

double identity_loss(const model::MatModel& m, const embed::Embedder& tuning, const Tensor<float>& x,
                     const Tensor<float>& mask, const Tensor<float>& x_p, const std::vector<float>& s_u,
                     const Tensor<float>& B) {
  require_tuning_role(tuning);
  const int S = m.config.image_size;
  const auto target = embed::embed(tuning, batch1(x_p, 3, S));
  return evaluate(m, tuning, batch1(x, 3, S), batch1(mask, 1, S), target, s_u, B, false).loss;
}

StyleOptResult optimize_style_for_identity(const model::MatModel& m, const Tensor<float>& x, const Tensor<float>& mask,
                                           const Tensor<float>& x_p, const embed::Embedder& tuning,
                                           std::vector<float> initial, const Tensor<float>& B, int steps,
                                           double learning_rate) {
  require_tuning_role(tuning);
  if (steps < 0) throw ConfigError("style optimization steps must be non-negative");
  if (static_cast<int>(initial.size()) != m.config.style_dim)
    throw ShapeError("initial style has " + std::to_string(initial.size()) + " entries, model expects " +
                     std::to_string(m.config.style_dim));
  const int S = m.config.image_size;
  const auto xb = batch1(x, 3, S);
  const auto bb = batch1(mask, 1, S);
  const auto target = embed::embed(tuning, batch1(x_p, 3, S));
  StyleOptResult res;
  res.s_u = initial;
  res.best_loss = std::numeric_limits<double>::infinity();
  auto s = std::move(initial);
  for (int step = 0; step <= steps; ++step) {
    const auto ev = evaluate(m, tuning, xb, bb, target, s, B, step < steps);
    if (!std::isfinite(ev.loss)) {
      res.non_finite = true;
      break;
    }
    res.losses.push_back(ev.loss);
    if (ev.loss < res.best_loss) {
      res.best_loss = ev.loss;
      res.s_u = s;
    }
    if (step == steps) break;
    for (std::size_t k = 0; k < s.size(); ++k) s[k] -= static_cast<float>(learning_rate) * ev.grad[k];
  }
  if (res.losses.empty()) res.best_loss = std::numeric_limits<double>::quiet_NaN();
  return res;
}

std::vector<float> initial_style(const model::MatModel& m, const tuning::AnchorStore* anchors, std::uint64_t seed) {
  auto rng = make_rng(seed, {0x1a});
  const auto z = randn<float>({1, m.config.style_dim}, rng);
  Tape<float> tape;
  const Bound<float> p(tape, std::as_const(m.params));
  auto fresh = model::map_noise(m.config, p, tape.constant(z)).value().storage();
  if (!anchors) return fresh;
  const std::vector<float>* best = nullptr;
  double best_cos = -2;
  for (const auto& a : anchors->anchors()) {
    if (a.id.rfind("ref:", 0) != 0 || a.s_u.size() != fresh.size()) continue;
    double ab = 0, aa = 0, bb = 0;
    for (std::size_t k = 0; k < fresh.size(); ++k) {
      ab += double(a.s_u[k]) * fresh[k];
      aa += double(a.s_u[k]) * a.s_u[k];
      bb += double(fresh[k]) * fresh[k];
    }
    const double c = ab / std::sqrt(aa * bb);
    if (c > best_cos) {
      best_cos = c;
      best = &a.s_u;
    }
  }
  return best ? *best : fresh;
}

InpaintResult inpaint(const InpaintRequest& req) {
  if (!req.image || !req.mask || !req.model) throw DomainError("inpaint: image, mask and model are required");
  req.style.validate();
  const auto& m = *req.model;
  const int S = m.config.image_size;
  if (req.image->shape() != Shape{3, S, S})
    throw ShapeError("inpaint: image " + shape_str(req.image->shape()) + " does not match model size " + std::to_string(S));
  data::check_inpaint_mask(*req.mask, S, S);
  const bool optimize = req.style.steps > 0 && req.embedder;
  if (req.style.steps > 0 && (!req.embedder || !req.reference))
    throw DomainError("inpaint: style optimization needs a reference image and the tuning embedder");
  const auto B = model::sample_feature_mask<float>(m.config, 1, req.seed);

  InpaintResult res;
  res.identity_loss = std::numeric_limits<double>::quiet_NaN();
  double best = std::numeric_limits<double>::infinity();
  for (int r = 0; r < req.style.restarts; ++r) {
    auto s0 = req.initial_style && r == 0
                  ? *req.initial_style
                  : initial_style(m, req.style.start_from_anchor ? req.anchors : nullptr, req.seed + static_cast<std::uint64_t>(r));
    if (!optimize) {
      res.s_u = std::move(s0);
      if (req.embedder && req.reference) {
        res.identity_loss = identity_loss(m, *req.embedder, *req.image, *req.mask, *req.reference, res.s_u, B);
        res.identity_losses = {res.identity_loss};
      }
      break;
    }
    auto opt = optimize_style_for_identity(m, *req.image, *req.mask, *req.reference, *req.embedder, std::move(s0), B,
                                           req.style.steps, req.style.learning_rate);
    if (r == 0 || opt.best_loss < best) {
      best = opt.best_loss;
      res.s_u = opt.s_u;
      res.identity_losses = opt.losses;
      res.identity_loss = opt.best_loss;
      res.non_finite = opt.non_finite;
    }
  }

  Tape<float> tape;
  const Bound<float> p(tape, std::as_const(m.params));
  res.raw = model::forward(m.config, p, tape.constant(batch1(*req.image, 3, S)), tape.constant(batch1(*req.mask, 1, S)),
                           tape.constant(Tensor<float>({1, static_cast<int>(res.s_u.size())}, res.s_u)), tape.constant(B))
                .value();
  res.raw.reshape({3, S, S});
  auto b3 = batch1(*req.mask, 1, S);
  res.composited = model::composite(batch1(*req.image, 3, S), batch1(res.raw, 3, S), b3);
  res.composited.reshape({3, S, S});
  if (req.blend) {
    BlendProblem bp{res.composited, res.raw, *req.mask};
    auto blended = poisson_blend(bp);
    res.blended = std::move(blended.image);
    res.solver_iterations = blended.iterations;
    res.solver_residual = blended.residual;
  } else {
    res.blended = res.composited;
  }
  return res;
}

json result_record(const InpaintResult& r) {
  json losses = json::array();
  for (double l : r.identity_losses) losses.push_back(l);
  json j = {{"identity_losses", losses},
            {"non_finite", r.non_finite},
            {"solver_iterations", r.solver_iterations},
            {"solver_residual", r.solver_residual}};
  j["identity_loss"] = std::isfinite(r.identity_loss) ? json(r.identity_loss) : json(nullptr);
  return j;
}

}  // namespace anchortune::inference
