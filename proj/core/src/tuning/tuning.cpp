#include "anchortune/tuning/tuning.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numeric>
#include <sstream>

#include "anchortune/config_json.hpp"
#include "anchortune/error.hpp"
#include "anchortune/model/pretrain.hpp"
#include "anchortune/numerics/ops.hpp"
#include "anchortune/numerics/optim.hpp"
#include "anchortune/numerics/random.hpp"

namespace anchortune::tuning {

using nlohmann::json;

std::string_view to_string(Variant v) {
  switch (v) {
    case Variant::S: return "S";
    case Variant::C: return "C";
    case Variant::NoAnchor: return "no-anchor";
  }
  return "?";
}

std::optional<Variant> variant_from_string(std::string_view s) {
  if (s == "S") return Variant::S;
  if (s == "C") return Variant::C;
  if (s == "no-anchor") return Variant::NoAnchor;
  return std::nullopt;
}

std::string_view to_string(AnchorInit a) { return a == AnchorInit::Random ? "random" : "optimized"; }

std::optional<AnchorInit> anchor_init_from_string(std::string_view s) {
  if (s == "random") return AnchorInit::Random;
  if (s == "optimized") return AnchorInit::Optimized;
  return std::nullopt;
}

void TuningConfig::validate() const {
  if (steps <= 0) throw ConfigError("tuning.steps must be positive");
  if (!(learning_rate >= 0)) throw ConfigError("tuning.learning_rate must be non-negative");
  if (!(lambda_reg >= 0)) throw ConfigError("tuning.lambda_reg must be non-negative");
  if (reg_batch < 0) throw ConfigError("tuning.reg_batch must be non-negative");
  if (anchor_init_steps < 0) throw ConfigError("tuning.anchor_init_steps must be non-negative");
  if (!(anchor_init_lr > 0)) throw ConfigError("tuning.anchor_init_lr must be positive");
  if (!(sigma >= 0)) throw ConfigError("tuning.sigma must be non-negative");
  if (!(min_hole > 0 && min_hole <= max_hole && max_hole <= 0.6))
    throw ConfigError("tuning hole range must satisfy 0 < min_hole <= max_hole <= 0.6");
}

void to_json(json& j, const TuningConfig& c) {
  j = {{"variant", to_string(c.variant)},
       {"steps", c.steps},
       {"learning_rate", c.learning_rate},
       {"lambda_reg", c.lambda_reg},
       {"reg_batch", c.reg_batch},
       {"anchor_init", to_string(c.anchor_init)},
       {"anchor_init_steps", c.anchor_init_steps},
       {"anchor_init_lr", c.anchor_init_lr},
       {"clustering", c.clustering},
       {"grouping", c.grouping},
       {"sigma", c.sigma},
       {"min_hole", c.min_hole},
       {"max_hole", c.max_hole},
       {"seed", c.seed}};
}

void from_json(const json& j, TuningConfig& c) {
  constexpr std::string_view w = "tuning";
  cfg::reject_unknown(j,
                      {"variant", "steps", "learning_rate", "lambda_reg", "reg_batch", "anchor_init", "anchor_init_steps",
                       "anchor_init_lr", "clustering", "grouping", "sigma", "min_hole", "max_hole", "seed"},
                      w);
  if (j.contains("variant")) {
    std::string s;
    cfg::read(j, "variant", s, w);
    const auto v = variant_from_string(s);
    if (!v) throw ConfigError("tuning.variant: expected S, C or no-anchor, got '" + s + "'");
    c.variant = *v;
  }
  if (j.contains("anchor_init")) {
    std::string s;
    cfg::read(j, "anchor_init", s, w);
    const auto a = anchor_init_from_string(s);
    if (!a) throw ConfigError("tuning.anchor_init: expected random or optimized, got '" + s + "'");
    c.anchor_init = *a;
  }
  cfg::read(j, "steps", c.steps, w);
  cfg::read(j, "learning_rate", c.learning_rate, w);
  cfg::read(j, "lambda_reg", c.lambda_reg, w);
  cfg::read(j, "reg_batch", c.reg_batch, w);
  cfg::read(j, "anchor_init_steps", c.anchor_init_steps, w);
  cfg::read(j, "anchor_init_lr", c.anchor_init_lr, w);
  cfg::read(j, "clustering", c.clustering, w);
  cfg::read(j, "grouping", c.grouping, w);
  cfg::read(j, "sigma", c.sigma, w);
  cfg::read(j, "min_hole", c.min_hole, w);
  cfg::read(j, "max_hole", c.max_hole, w);
  cfg::read(j, "seed", c.seed, w);
}

std::vector<Pair> enumerate_pairs(const std::vector<ReferenceGroup>& groups, Variant variant, bool clustering) {
  std::vector<Pair> out;
  for (const auto& g : groups) {
    for (int i : g.members) {
      if (variant == Variant::NoAnchor) {
        out.push_back({i, ""});
        continue;
      }
      out.push_back({i, base_anchor_id(i)});
      if (variant == Variant::S) continue;
      for (int j : g.members)
        if (j != i) out.push_back({i, clustering ? cluster_anchor_id(j, i) : base_anchor_id(j)});
    }
  }
  return out;
}

AnchorStore prepare_anchors(const model::MatModel& base, const model::FeatureExtractor& fe,
                            const std::vector<Tensor<float>>& refs, const std::vector<ReferenceGroup>& groups,
                            const TuningConfig& cfg) {
  cfg.validate();
  AnchorStore store;
  if (cfg.variant == Variant::NoAnchor) return store;
  const int n = static_cast<int>(refs.size());
  std::vector<StyleAnchor> anchors;
  if (cfg.anchor_init == AnchorInit::Random) {
    anchors = init_anchors_random(base, n, cfg.seed);
  } else {
    anchors = init_anchors_optimized(base, fe, refs, {cfg.anchor_init_steps, cfg.anchor_init_lr, 0.3}, cfg.seed).anchors;
  }
  for (auto& a : anchors) store.add(std::move(a));
  if (cfg.variant == Variant::C && cfg.clustering) build_anchor_clusters(groups, store, cfg.sigma, cfg.seed);
  return store;
}

namespace {

Tensor<float> as_row(const std::vector<float>& v) { return Tensor<float>({1, static_cast<int>(v.size())}, v); }

Tensor<float> base_inpaint(const model::MatModel& m, const Tensor<float>& x, const Tensor<float>& mask,
                           const Tensor<float>& s_u, const Tensor<float>& B) {
  Tape<float> tape;
  const Bound<float> p(tape, std::as_const(m.params));
  return model::forward(m.config, p, tape.constant(x), tape.constant(mask), tape.constant(s_u), tape.constant(B)).value();
}

}  // namespace

RegularizationSet make_regularization_set(const model::MatModel& base, const std::vector<Tensor<float>>& images,
                                          const std::vector<Tensor<float>>& masks, AnchorStore& store,
                                          std::uint64_t seed) {
  if (images.size() != masks.size()) throw ShapeError("regularization set: image and mask counts differ");
  const int S = base.config.image_size;
  RegularizationSet reg{base, {}};
  for (std::size_t t = 0; t < images.size(); ++t) {
    RegItem item;
    item.image = images[t];
    item.mask = masks[t];
    item.image.reshape({1, 3, S, S});
    item.mask.reshape({1, 1, S, S});
    auto rng = make_rng(seed, {0x5e9, t});
    const auto z = randn<float>({1, base.config.style_dim}, rng);
    item.B = model::sample_feature_mask<float>(base.config, 1, rng());
    item.anchor = reg_anchor_id(static_cast<int>(t));
    Tape<float> tape;
    const Bound<float> p(tape, std::as_const(base.params));
    const auto s_u = model::map_noise(base.config, p, tape.constant(z)).value();
    store.add({item.anchor, s_u.storage(), AnchorOrigin::Random, "", seed});
    item.base_output = base_inpaint(base, item.image, item.mask, s_u, item.B);
    reg.items.push_back(std::move(item));
  }
  return reg;
}

template <typename T>
Var<T> regularization_loss(const model::MatConfig& cfg, const Bound<T>& current, const ParamSet<T>& base,
                           const model::FeatureExtractor& fe, const Tensor<T>& x, const Tensor<T>& s_u,
                           const Tensor<T>& mask, const Tensor<T>& B) {
  Tensor<T> target;
  {
    Tape<T> frozen;
    const Bound<T> p(frozen, base);
    target = model::forward(cfg, p, frozen.constant(x), frozen.constant(mask), frozen.constant(s_u), frozen.constant(B))
                 .value();
  }
  auto& tape = current.tape();
  const auto out = model::forward(cfg, current, tape.constant(x), tape.constant(mask), tape.constant(s_u), tape.constant(B));
  return model::reconstruction_loss(fe, tape.constant(std::move(target)), out);
}

template Var<float> regularization_loss(const model::MatConfig&, const Bound<float>&, const ParamSet<float>&,
                                        const model::FeatureExtractor&, const Tensor<float>&, const Tensor<float>&,
                                        const Tensor<float>&, const Tensor<float>&);
template Var<double> regularization_loss(const model::MatConfig&, const Bound<double>&, const ParamSet<double>&,
                                         const model::FeatureExtractor&, const Tensor<double>&, const Tensor<double>&,
                                         const Tensor<double>&, const Tensor<double>&);

json to_json(const TuneLogEntry& e) {
  return {{"step", e.step},         {"epoch", e.epoch},       {"image", e.image},
          {"anchor", e.anchor},     {"ref_loss", e.ref_loss}, {"reg_loss", e.reg_loss},
          {"total_loss", e.total_loss}, {"learning_rate", e.learning_rate}};
}

void write_tune_log(const std::filesystem::path& path, const std::vector<TuneLogEntry>& log) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot write " + path.string());
  for (const auto& e : log) out << to_json(e).dump() << '\n';
  if (!out) throw IoError("write failed for " + path.string());
}

std::vector<TuneLogEntry> read_tune_log(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open tuning log " + path.string());
  std::vector<TuneLogEntry> out;
  std::string line;
  int lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty()) continue;
    try {
      const auto j = json::parse(line);
      TuneLogEntry e;
      j.at("step").get_to(e.step);
      j.at("epoch").get_to(e.epoch);
      j.at("image").get_to(e.image);
      j.at("anchor").get_to(e.anchor);
      j.at("ref_loss").get_to(e.ref_loss);
      j.at("reg_loss").get_to(e.reg_loss);
      j.at("total_loss").get_to(e.total_loss);
      j.at("learning_rate").get_to(e.learning_rate);
      if (j.size() != 8) throw FormatError("unexpected fields");
      out.push_back(std::move(e));
    } catch (const json::exception& ex) {
      throw FormatError(path.string() + ":" + std::to_string(lineno) + ": " + ex.what());
    } catch (const FormatError& ex) {
      throw FormatError(path.string() + ":" + std::to_string(lineno) + ": " + ex.what());
    }
  }
  return out;
}

TuneResult tune(const model::MatModel& init, const model::FeatureExtractor& fe, const std::vector<Tensor<float>>& refs,
                const std::vector<ReferenceGroup>& groups, const AnchorStore& anchors, const RegularizationSet& reg,
                const TuningConfig& cfg, const TuneProgressFn& progress) {
  cfg.validate();
  if (refs.empty()) throw DomainError("tune: empty reference set");
  const auto pairs = enumerate_pairs(groups, cfg.variant, cfg.clustering);
  for (const auto& p : pairs) {
    if (p.image < 0 || p.image >= static_cast<int>(refs.size()))
      throw DomainError("tune: group member " + std::to_string(p.image) + " outside the reference set");
    if (!p.anchor.empty() && !anchors.contains(p.anchor)) throw DomainError("tune: missing anchor '" + p.anchor + "'");
  }
  const bool use_reg = cfg.lambda_reg > 0 && cfg.reg_batch > 0;
  if (use_reg && static_cast<int>(reg.items.size()) < cfg.reg_batch)
    throw DomainError("tune: regularization set holds " + std::to_string(reg.items.size()) + " items, batch needs " +
                      std::to_string(cfg.reg_batch));

  TuneResult res{init, {}, static_cast<int>(pairs.size())};
  auto& model = res.model;
  const auto& mc = model.config;
  const int S = mc.image_size;

  // The mapping network sees no gradient: anchors are fixed codes and fresh
  // codes in the ablation come from the base mapping.
  std::vector<Tensor<float>*> trainable;
  for (auto& e : model.params.entries())
    if (e.name.rfind("map.", 0) != 0) trainable.push_back(&e.tensor);
  model.params.set_requires_grad(false);
  for (auto* t : trainable) t->set_requires_grad(true);
  Optimizer<float> opt({OptimizerKind::Adam, cfg.learning_rate}, trainable);

  auto rng = make_rng(cfg.seed, {0x7e});
  std::vector<std::size_t> order(pairs.size());
  std::vector<std::size_t> reg_order(reg.items.size());
  for (int step = 0; step < cfg.steps; ++step) {
    const int epoch = step / static_cast<int>(pairs.size());
    const auto pos = static_cast<std::size_t>(step) % pairs.size();
    if (pos == 0) {
      std::iota(order.begin(), order.end(), std::size_t{0});
      auto erng = make_rng(cfg.seed, {0x5c, static_cast<std::uint64_t>(epoch)});
      std::shuffle(order.begin(), order.end(), erng);
    }
    const Pair& pair = pairs[order[pos]];

    const auto draw = model::draw_training_problem(mc, 1, cfg.min_hole, cfg.max_hole, rng());
    Tensor<float> s_ref;
    if (pair.anchor.empty()) {
      Tape<float> t;
      const Bound<float> bp(t, std::as_const(reg.base.params));
      s_ref = model::map_noise(mc, bp, t.constant(draw.z)).value();
    } else {
      s_ref = as_row(anchors.at(pair.anchor).s_u);
    }
    Tensor<float> x_ref = refs[static_cast<std::size_t>(pair.image)];
    x_ref.reshape({1, 3, S, S});

    std::vector<const Tensor<float>*> xs{&x_ref}, ms{&draw.masks}, bs{&draw.B}, targets{&x_ref};
    std::vector<Tensor<float>> s_rows{s_ref};
    if (use_reg) {
      std::iota(reg_order.begin(), reg_order.end(), std::size_t{0});
      for (int k = 0; k < cfg.reg_batch; ++k) {
        const auto r = k + rng() % (reg_order.size() - static_cast<std::size_t>(k));
        std::swap(reg_order[static_cast<std::size_t>(k)], reg_order[r]);
        const auto& item = reg.items[reg_order[static_cast<std::size_t>(k)]];
        xs.push_back(&item.image);
        ms.push_back(&item.mask);
        bs.push_back(&item.B);
        targets.push_back(&item.base_output);
        s_rows.push_back(as_row(anchors.at(item.anchor).s_u));
      }
    }
    const int n = static_cast<int>(xs.size());
    auto cat = [](const std::vector<const Tensor<float>*>& v) {
      std::vector<float> data;
      Shape shape = v.front()->shape();
      for (const auto* t : v) data.insert(data.end(), t->data().begin(), t->data().end());
      shape[0] = static_cast<int>(v.size());
      return Tensor<float>(shape, std::move(data));
    };
    std::vector<const Tensor<float>*> s_ptrs;
    for (const auto& s : s_rows) s_ptrs.push_back(&s);

    Tape<float> tape;
    const Bound<float> p(tape, model.params);
    const auto x_hat = model::forward(mc, p, tape.constant(cat(xs)), tape.constant(cat(ms)), tape.constant(cat(s_ptrs)),
                                      tape.constant(cat(bs)));
    const auto per = model::reconstruction_loss_per_sample(fe, tape.constant(cat(targets)), x_hat);
    Tensor<float> w({n}, static_cast<float>(cfg.lambda_reg));
    w[0] = 1.0f;
    const auto total = ops::sum(ops::mul(per, tape.constant(std::move(w))));

    TuneLogEntry entry;
    entry.step = step;
    entry.epoch = epoch;
    entry.image = pair.image;
    entry.anchor = pair.anchor;
    const auto pv = per.value().data();
    entry.ref_loss = pv[0];
    for (int k = 1; k < n; ++k) entry.reg_loss += pv[static_cast<std::size_t>(k)];
    entry.total_loss = total.value().item();
    entry.learning_rate = cfg.learning_rate;
    if (!std::isfinite(entry.total_loss))
      throw NumericError("tune: non-finite loss at step " + std::to_string(step) + " (image " +
                         std::to_string(pair.image) + ", anchor '" + pair.anchor + "', ref " +
                         std::to_string(entry.ref_loss) + ", reg " + std::to_string(entry.reg_loss) + ")");
    tape.backward(total);
    opt.step();
    if (progress) progress(entry);
    res.log.push_back(std::move(entry));
  }
  model.params.set_requires_grad(true);
  return res;
}

}  // namespace anchortune::tuning
