#include "anchortune/tuning/anchors.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <map>
#include <sstream>

#include <json.hpp>

#include "anchortune/dataset/mask.hpp"
#include "anchortune/error.hpp"
#include "anchortune/numerics/ops.hpp"
#include "anchortune/numerics/random.hpp"

namespace anchortune::tuning {

using nlohmann::json;

std::string_view to_string(AnchorOrigin o) {
  switch (o) {
    case AnchorOrigin::Random: return "random";
    case AnchorOrigin::Optimized: return "optimized";
    case AnchorOrigin::Perturbed: return "perturbed";
  }
  return "?";
}

std::optional<AnchorOrigin> anchor_origin_from_string(std::string_view s) {
  if (s == "random") return AnchorOrigin::Random;
  if (s == "optimized") return AnchorOrigin::Optimized;
  if (s == "perturbed") return AnchorOrigin::Perturbed;
  return std::nullopt;
}

void AnchorStore::add(StyleAnchor a) {
  if (a.id.empty()) throw DomainError("anchor id must not be empty");
  if (a.s_u.empty()) throw DomainError("anchor '" + a.id + "' has an empty style vector");
  if (contains(a.id)) throw DomainError("duplicate anchor id '" + a.id + "'");
  if (!anchors_.empty() && anchors_.front().s_u.size() != a.s_u.size())
    throw ShapeError("anchor '" + a.id + "' has dimension " + std::to_string(a.s_u.size()) + ", store holds " +
                     std::to_string(anchors_.front().s_u.size()));
  if (a.origin == AnchorOrigin::Perturbed && !contains(a.parent))
    throw DomainError("perturbed anchor '" + a.id + "' refers to unknown parent '" + a.parent + "'");
  anchors_.push_back(std::move(a));
}

bool AnchorStore::contains(std::string_view id) const {
  return std::any_of(anchors_.begin(), anchors_.end(), [&](const auto& a) { return a.id == id; });
}

const StyleAnchor& AnchorStore::at(std::string_view id) const {
  for (const auto& a : anchors_)
    if (a.id == id) return a;
  throw DomainError("unknown anchor '" + std::string(id) + "'");
}

std::string AnchorStore::to_json() const {
  json arr = json::array();
  for (const auto& a : anchors_) {
    json e = {{"id", a.id}, {"origin", to_string(a.origin)}, {"seed", a.seed}, {"s_u", a.s_u}};
    if (a.origin == AnchorOrigin::Perturbed) e["parent"] = a.parent;
    arr.push_back(std::move(e));
  }
  return json{{"version", 1}, {"anchors", arr}}.dump(1) + "\n";
}

AnchorStore AnchorStore::from_json(std::string_view text, const std::string& source) {
  auto fail = [&](const std::string& m) { return FormatError(source + ": " + m); };
  json j;
  try {
    j = json::parse(text);
  } catch (const json::exception& e) {
    throw fail(e.what());
  }
  if (!j.is_object()) throw fail("expected an object");
  for (auto it = j.begin(); it != j.end(); ++it)
    if (it.key() != "version" && it.key() != "anchors") throw fail("unknown field '" + it.key() + "'");
  if (!j.contains("version") || j["version"] != 1) throw fail("missing or unsupported version");
  if (!j.contains("anchors") || !j["anchors"].is_array()) throw fail("missing anchors array");
  AnchorStore store;
  for (const auto& e : j["anchors"]) {
    if (!e.is_object()) throw fail("anchor entry must be an object");
    for (auto it = e.begin(); it != e.end(); ++it)
      if (it.key() != "id" && it.key() != "origin" && it.key() != "seed" && it.key() != "s_u" && it.key() != "parent")
        throw fail("unknown anchor field '" + it.key() + "'");
    for (const char* k : {"id", "origin", "seed", "s_u"})
      if (!e.contains(k)) throw fail(std::string("anchor entry missing '") + k + "'");
    StyleAnchor a;
    try {
      a.id = e["id"].get<std::string>();
      const auto origin = anchor_origin_from_string(e["origin"].get<std::string>());
      if (!origin) throw fail("anchor '" + a.id + "': bad origin");
      a.origin = *origin;
      a.seed = e["seed"].get<std::uint64_t>();
      a.s_u = e["s_u"].get<std::vector<float>>();
      if (a.origin == AnchorOrigin::Perturbed) {
        if (!e.contains("parent")) throw fail("perturbed anchor '" + a.id + "' missing parent");
        a.parent = e["parent"].get<std::string>();
      } else if (e.contains("parent")) {
        throw fail("anchor '" + a.id + "': parent given for a non-perturbed anchor");
      }
      store.add(std::move(a));
    } catch (const json::exception& ex) {
      throw fail(ex.what());
    } catch (const DomainError& ex) {
      throw fail(ex.what());
    } catch (const ShapeError& ex) {
      throw fail(ex.what());
    }
  }
  return store;
}

void AnchorStore::save(const std::filesystem::path& path) const {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot write " + path.string());
  out << to_json();
  if (!out) throw IoError("write failed for " + path.string());
}

AnchorStore AnchorStore::load(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open anchor store " + path.string());
  std::stringstream ss;
  ss << in.rdbuf();
  return from_json(ss.str(), path.string());
}

std::string base_anchor_id(int ref) { return "ref:" + std::to_string(ref); }
std::string cluster_anchor_id(int parent_ref, int image) {
  return "ref:" + std::to_string(parent_ref) + "~" + std::to_string(image);
}
std::string reg_anchor_id(int t) { return "reg:" + std::to_string(t); }

Tensor<float> anchor_noise(int style_dim, std::uint64_t seed, int index) {
  auto rng = make_rng(seed, {0xa9c, static_cast<std::uint64_t>(index)});
  return randn<float>({1, style_dim}, rng);
}

namespace {

std::vector<float> mapped(const model::MatModel& m, const Tensor<float>& z) {
  Tape<float> tape;
  const Bound<float> p(tape, std::as_const(m.params));
  return model::map_noise(m.config, p, tape.constant(z)).value().storage();
}

}  // namespace

std::vector<StyleAnchor> init_anchors_random(const model::MatModel& m, int n, std::uint64_t seed) {
  if (n < 0) throw DomainError("init_anchors_random: negative count");
  std::vector<StyleAnchor> out;
  for (int i = 0; i < n; ++i)
    out.push_back({base_anchor_id(i), mapped(m, anchor_noise(m.config.style_dim, seed, i)), AnchorOrigin::Random, "", seed});
  return out;
}

OptimizedAnchors init_anchors_optimized(const model::MatModel& m, const model::FeatureExtractor& fe,
                                        const std::vector<Tensor<float>>& refs, const AnchorOptConfig& cfg,
                                        std::uint64_t seed) {
  if (cfg.steps < 0) throw ConfigError("anchor init steps must be non-negative");
  if (!(cfg.learning_rate > 0)) throw ConfigError("anchor init learning rate must be positive");
  const int n = static_cast<int>(refs.size());
  const int d = m.config.style_dim;
  const int S = m.config.image_size;
  OptimizedAnchors res;
  if (n == 0) return res;

  std::vector<const Tensor<float>*> items;
  for (const auto& r : refs) items.push_back(&r);
  const auto x = model::stack(items);
  Tensor<float> masks({n, 1, S, S});
  Tensor<float> z({n, d});
  auto rng = make_rng(seed, {0x0b7});
  for (int i = 0; i < n; ++i) {
    data::MaskSpec spec;
    spec.kind = i % 2 ? data::MaskKind::FreeForm : data::MaskKind::Rectangle;
    spec.hole_fraction = cfg.hole_fraction;
    spec.seed = rng();
    const auto b = data::generate_mask(spec, S);
    std::copy(b.data().begin(), b.data().end(), masks.data().begin() + static_cast<std::ptrdiff_t>(i) * S * S);
    const auto zi = anchor_noise(d, seed, i);
    std::copy(zi.data().begin(), zi.data().end(), z.data().begin() + static_cast<std::ptrdiff_t>(i) * d);
  }
  const auto B = model::sample_feature_mask<float>(m.config, n, rng());

  // Evaluates per-reference losses at z and their gradients with respect to z.
  auto evaluate = [&](const Tensor<float>& zv, std::vector<float>& grad) {
    Tape<float> tape;
    const Bound<float> p(tape, std::as_const(m.params));
    const auto zvar = tape.variable(zv);
    const auto xv = tape.constant(x);
    const auto x_hat = model::forward(m.config, p, xv, tape.constant(masks), model::map_noise(m.config, p, zvar),
                                      tape.constant(B));
    const auto per = model::reconstruction_loss_per_sample(fe, xv, x_hat);
    tape.backward(ops::sum(per));
    const auto g = tape.grad_of(zvar);
    grad.assign(g.begin(), g.end());
    std::vector<double> l(per.value().data().begin(), per.value().data().end());
    for (int i = 0; i < n; ++i)
      if (!std::isfinite(l[i])) throw NumericError("anchor optimization: non-finite loss for reference " + std::to_string(i));
    return l;
  };

  std::vector<float> grad;
  Tensor<float> accepted = z;
  std::vector<float> accepted_grad;
  std::vector<double> current = evaluate(z, accepted_grad);
  res.initial_loss = current;
  std::vector<double> lr(n, cfg.learning_rate);
  for (int step = 0; step < cfg.steps; ++step) {
    Tensor<float> proposal = accepted;
    for (int i = 0; i < n; ++i)
      for (int k = 0; k < d; ++k) proposal[i * d + k] -= static_cast<float>(lr[i]) * accepted_grad[i * d + k];
    const auto l = evaluate(proposal, grad);
    for (int i = 0; i < n; ++i) {
      if (l[i] <= current[i]) {
        current[i] = l[i];
        std::copy_n(proposal.data().begin() + i * d, d, accepted.data().begin() + i * d);
        std::copy_n(grad.begin() + i * d, d, accepted_grad.begin() + i * d);
        lr[i] *= 1.1;
      } else {
        lr[i] *= 0.5;
      }
    }
  }
  res.final_loss = current;

  for (int i = 0; i < n; ++i) {
    Tensor<float> zi({1, d}, std::vector<float>(accepted.data().begin() + i * d, accepted.data().begin() + (i + 1) * d));
    res.anchors.push_back({base_anchor_id(i), mapped(m, zi), AnchorOrigin::Optimized, "", seed});
  }
  return res;
}

std::vector<ReferenceGroup> group_references(const data::Manifest& m, int identity, bool grouping) {
  const auto recs = m.select(data::Split::Train, identity);
  if (recs.empty())
    throw DomainError("identity " + std::to_string(identity) + " has no reference (train) records");
  std::map<std::string, ReferenceGroup> by_label;
  for (std::size_t i = 0; i < recs.size(); ++i) {
    const std::string label = grouping ? recs[i]->group : "mixed";
    auto& g = by_label[label];
    g.label = label;
    g.members.push_back(static_cast<int>(i));
  }
  std::vector<ReferenceGroup> out;
  for (auto& [_, g] : by_label) out.push_back(std::move(g));
  return out;
}

void build_anchor_clusters(const std::vector<ReferenceGroup>& groups, AnchorStore& store, double sigma,
                           std::uint64_t seed) {
  if (!(sigma >= 0)) throw ConfigError("cluster sigma must be non-negative");
  for (const auto& g : groups) {
    for (int parent : g.members) {
      const auto& base = store.at(base_anchor_id(parent));
      const std::vector<float> s = base.s_u;
      for (int image : g.members) {
        if (image == parent) continue;
        const std::uint64_t eps_seed =
            make_rng(seed, {0xc1u, static_cast<std::uint64_t>(parent), static_cast<std::uint64_t>(image)})();
        auto rng = make_rng(eps_seed);
        const auto eps = randn<double>({static_cast<int>(s.size())}, rng);
        std::vector<float> v(s.size());
        for (std::size_t k = 0; k < s.size(); ++k) v[k] = static_cast<float>(s[k] + sigma * eps[k]);
        store.add({cluster_anchor_id(parent, image), std::move(v), AnchorOrigin::Perturbed, base_anchor_id(parent),
                   eps_seed});
      }
    }
  }
}

}  // namespace anchortune::tuning
