#include "anchortune/embedder/embedder.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <set>

#include "anchortune/config_json.hpp"
#include "anchortune/error.hpp"
#include "anchortune/model/checkpoint.hpp"
#include "anchortune/model/mat_lite.hpp"
#include "anchortune/numerics/ops.hpp"
#include "anchortune/numerics/optim.hpp"
#include "anchortune/numerics/random.hpp"

namespace anchortune::embed {

std::string_view to_string(Role r) { return r == Role::Tuning ? "tuning" : "evaluation"; }

std::optional<Role> role_from_string(std::string_view s) {
  if (s == "tuning") return Role::Tuning;
  if (s == "evaluation") return Role::Evaluation;
  return std::nullopt;
}

void EmbedderConfig::validate() const {
  if (image_size != 16 && image_size != 32 && image_size != 64)
    throw ConfigError("embedder image_size " + std::to_string(image_size) + " unsupported");
  if (channels.empty() || channels.size() > 4) throw ConfigError("embedder needs 1 to 4 conv blocks");
  for (int c : channels)
    if (c <= 0) throw ConfigError("embedder channel widths must be positive");
  if (penultimate_dim <= 0 || embedding_dim <= 0) throw ConfigError("embedder dimensions must be positive");
  if (epochs < 0 || batch <= 0) throw ConfigError("embedder epochs must be >= 0 and batch > 0");
  if (!(learning_rate >= 0) || !(scale > 0) || !(margin >= 0)) throw ConfigError("embedder optimizer settings invalid");
}

EmbedderConfig default_embedder_config(Role role) {
  EmbedderConfig c;
  c.role = role;
  if (role == Role::Tuning) {
    c.channels = {16, 32, 64};
    c.seed = 101;
  } else {
    c.channels = {16, 24, 32, 48};
    c.seed = 202;
  }
  return c;
}

void to_json(nlohmann::json& j, const EmbedderConfig& c) {
  j = {{"role", std::string(to_string(c.role))},
       {"image_size", c.image_size},
       {"channels", c.channels},
       {"penultimate_dim", c.penultimate_dim},
       {"embedding_dim", c.embedding_dim},
       {"seed", c.seed},
       {"epochs", c.epochs},
       {"batch", c.batch},
       {"learning_rate", c.learning_rate},
       {"margin", c.margin},
       {"scale", c.scale},
       {"min_separation", c.min_separation}};
}

void from_json(const nlohmann::json& j, EmbedderConfig& c) {
  constexpr std::string_view w = "embedder";
  cfg::reject_unknown(j, {"role", "image_size", "channels", "penultimate_dim", "embedding_dim", "seed", "epochs", "batch",
                          "learning_rate", "margin", "scale", "min_separation"},
                      w);
  if (j.contains("role")) {
    std::string r;
    cfg::read(j, "role", r, w);
    const auto role = role_from_string(r);
    if (!role) throw ConfigError("embedder.role: unknown role '" + r + "'");
    c.role = *role;
  }
  cfg::read(j, "image_size", c.image_size, w);
  cfg::read(j, "channels", c.channels, w);
  cfg::read(j, "penultimate_dim", c.penultimate_dim, w);
  cfg::read(j, "embedding_dim", c.embedding_dim, w);
  cfg::read(j, "seed", c.seed, w);
  cfg::read(j, "epochs", c.epochs, w);
  cfg::read(j, "batch", c.batch, w);
  cfg::read(j, "learning_rate", c.learning_rate, w);
  cfg::read(j, "margin", c.margin, w);
  cfg::read(j, "scale", c.scale, w);
  cfg::read(j, "min_separation", c.min_separation, w);
}

namespace {

int block_stride(const EmbedderConfig& cfg, std::size_t i) { return cfg.channels.size() == 4 && i == 0 ? 1 : 2; }

int final_size(const EmbedderConfig& cfg) {
  int s = cfg.image_size;
  for (std::size_t i = 0; i < cfg.channels.size(); ++i) s /= block_stride(cfg, i);
  return s;
}

int flat_dim(const EmbedderConfig& cfg) {
  const int s = final_size(cfg);
  return cfg.channels.back() * s * s;
}

Tensor<float> he(Shape s, int fan_in, Rng& rng) { return randn<float>(std::move(s), rng, std::sqrt(2.0 / fan_in)); }

}  // namespace

Embedder create_embedder(const EmbedderConfig& cfg) {
  cfg.validate();
  Embedder e{cfg, {}};
  auto rng = make_rng(cfg.seed, {0xe3b});
  int cin = 3;
  for (std::size_t i = 0; i < cfg.channels.size(); ++i) {
    const std::string n = "conv" + std::to_string(i);
    e.params.add(n + ".w", he({cfg.channels[i], cin, 3, 3}, cin * 9, rng));
    e.params.add(n + ".b", Tensor<float>({cfg.channels[i]}));
    cin = cfg.channels[i];
  }
  e.params.add("pen.w", he({cfg.penultimate_dim, flat_dim(cfg)}, flat_dim(cfg), rng));
  e.params.add("pen.b", Tensor<float>({cfg.penultimate_dim}));
  e.params.add("emb.w", he({cfg.embedding_dim, cfg.penultimate_dim}, cfg.penultimate_dim, rng));
  e.params.add("emb.b", Tensor<float>({cfg.embedding_dim}));
  return e;
}

template <typename T>
EmbedOutput<T> embed_graph(const EmbedderConfig& cfg, const Bound<T>& p, const Var<T>& x) {
  const auto& s = x.shape();
  if (s.size() != 4 || s[1] != 3 || s[2] != cfg.image_size || s[3] != cfg.image_size)
    throw ShapeError("embedder expects [N,3," + std::to_string(cfg.image_size) + "," + std::to_string(cfg.image_size) +
                     "], got " + shape_str(s));
  Var<T> h = ops::standardize(x);
  for (std::size_t i = 0; i < cfg.channels.size(); ++i) {
    const std::string n = "conv" + std::to_string(i);
    h = ops::leaky_relu(ops::conv2d(h, p[n + ".w"], p[n + ".b"], block_stride(cfg, i), 1), T(0.2));
  }
  h = ops::reshape(h, {s[0], flat_dim(cfg)});
  EmbedOutput<T> out;
  out.penultimate = ops::linear(h, p["pen.w"], p["pen.b"]);
  out.embedding = ops::normalize_rows(ops::linear(ops::leaky_relu(out.penultimate, T(0.2)), p["emb.w"], p["emb.b"]));
  return out;
}

template EmbedOutput<float> embed_graph(const EmbedderConfig&, const Bound<float>&, const Var<float>&);
template EmbedOutput<double> embed_graph(const EmbedderConfig&, const Bound<double>&, const Var<double>&);

namespace {

template <bool Penultimate>
Tensor<float> run_frozen(const Embedder& e, const Tensor<float>& images) {
  Tape<float> tape;
  const Bound<float> p(tape, static_cast<const ParamSet<float>&>(e.params));
  const auto out = embed_graph(e.config, p, tape.constant(images));
  return Penultimate ? out.penultimate.value() : out.embedding.value();
}

Tensor<float> stack_images(const std::vector<LabeledImage>& items, std::size_t begin, std::size_t end) {
  std::vector<const Tensor<float>*> ptrs;
  for (std::size_t i = begin; i < end; ++i) ptrs.push_back(items[i].image);
  return model::stack(ptrs);
}

}  // namespace

Tensor<float> embed(const Embedder& e, const Tensor<float>& images) { return run_frozen<false>(e, images); }
Tensor<float> penultimate_features(const Embedder& e, const Tensor<float>& images) { return run_frozen<true>(e, images); }

SeparationStats separation(const Embedder& e, const std::vector<LabeledImage>& images) {
  if (images.size() < 2) throw DomainError("separation needs at least two images");
  std::vector<float> emb;
  constexpr std::size_t kChunk = 64;
  for (std::size_t i = 0; i < images.size(); i += kChunk) {
    const auto part = embed(e, stack_images(images, i, std::min(images.size(), i + kChunk)));
    emb.insert(emb.end(), part.data().begin(), part.data().end());
  }
  const std::size_t d = static_cast<std::size_t>(e.config.embedding_dim);
  double same = 0, cross = 0;
  long ns = 0, nc = 0;
  for (std::size_t i = 0; i < images.size(); ++i)
    for (std::size_t j = i + 1; j < images.size(); ++j) {
      double c = 0;
      for (std::size_t k = 0; k < d; ++k) c += static_cast<double>(emb[i * d + k]) * emb[j * d + k];
      if (images[i].label == images[j].label) same += c, ++ns;
      else cross += c, ++nc;
    }
  if (ns == 0 || nc == 0) throw DomainError("separation needs both same-label and cross-label pairs");
  return {same / static_cast<double>(ns), cross / static_cast<double>(nc)};
}

TrainEmbedderResult train_embedder(const EmbedderConfig& cfg, const std::vector<LabeledImage>& train,
                                   const std::vector<LabeledImage>& heldout,
                                   const std::function<void(int, double, double)>& progress) {
  cfg.validate();
  if (cfg.epochs == 0) throw ConfigError("embedder epochs = 0: an untrained embedder cannot separate identities");
  if (train.empty()) throw DomainError("train_embedder: empty training set");

  // dense class indices
  std::vector<int> labels;
  for (const auto& li : train) labels.push_back(li.label);
  std::vector<int> classes(labels);
  std::sort(classes.begin(), classes.end());
  classes.erase(std::unique(classes.begin(), classes.end()), classes.end());
  for (auto& l : labels) l = static_cast<int>(std::lower_bound(classes.begin(), classes.end(), l) - classes.begin());
  const int k = static_cast<int>(classes.size());
  if (k < 2) throw DomainError("train_embedder needs at least two identities");

  TrainEmbedderResult res{create_embedder(cfg), {}, {}};
  auto& e = res.embedder;
  auto rng = make_rng(cfg.seed, {0x7a1});
  ParamSet<float> head;
  head.add("head.w", randn<float>({k, cfg.embedding_dim}, rng, 1.0));
  auto tensors = e.params.tensors();
  tensors.push_back(&head["head.w"]);
  Optimizer<float> opt({OptimizerKind::Adam, cfg.learning_rate}, tensors);

  std::vector<std::size_t> order(train.size());
  std::iota(order.begin(), order.end(), 0);
  for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
    std::shuffle(order.begin(), order.end(), rng);
    double total = 0;
    int batches = 0;
    for (std::size_t start = 0; start < order.size(); start += static_cast<std::size_t>(cfg.batch)) {
      const std::size_t end = std::min(order.size(), start + cfg.batch);
      const int n = static_cast<int>(end - start);
      std::vector<const Tensor<float>*> ptrs;
      std::vector<int> y;
      Tensor<float> margin({n, k});
      for (std::size_t i = start; i < end; ++i) {
        ptrs.push_back(train[order[i]].image);
        y.push_back(labels[order[i]]);
        margin[(i - start) * k + y.back()] = static_cast<float>(cfg.margin);
      }
      Tape<float> tape;
      const Bound<float> p(tape, e.params);
      const auto out = embed_graph(cfg, p, tape.constant(model::stack(ptrs)));
      const auto w = ops::normalize_rows(tape.param(head["head.w"]));
      const auto cosine = ops::linear(out.embedding, w, Var<float>{});
      const auto logits = ops::affine(cosine - tape.constant(margin), static_cast<float>(cfg.scale), 0.0f);
      const auto loss = ops::softmax_cross_entropy(logits, std::span<const int>(y));
      const double l = loss.value().item();
      if (!std::isfinite(l)) throw NumericError("train_embedder: non-finite loss in epoch " + std::to_string(epoch));
      tape.backward(loss);
      opt.step();
      total += l;
      ++batches;
    }
    res.epoch_losses.push_back(total / batches);
    if (progress) progress(epoch, res.epoch_losses.back(), -1.0);
  }
  res.heldout = separation(e, heldout.empty() ? train : heldout);
  if (progress) progress(cfg.epochs, res.epoch_losses.back(), res.heldout.margin());
  if (res.heldout.margin() < cfg.min_separation)
    throw NumericError("embedder (" + std::string(to_string(cfg.role)) + ") held-out separation " +
                       std::to_string(res.heldout.margin()) + " below " + std::to_string(cfg.min_separation) +
                       "; enlarge the corpus (more identities or renders per identity) or train longer");
  return res;
}

void save_embedder(const std::filesystem::path& path, const Embedder& e) {
  model::save_checkpoint(path, "embedder", {{"role", std::string(to_string(e.config.role))}, {"config", e.config}},
                         e.params);
}

Embedder load_embedder(const std::filesystem::path& path, std::optional<Role> expected_role) {
  auto ck = model::load_checkpoint(path, "embedder");
  EmbedderConfig cfg;
  try {
    const auto& j = ck.meta.at("config");
    cfg::require_keys(j, nlohmann::json(EmbedderConfig{}), path.string() + ": embedder config");
    cfg = j.get<EmbedderConfig>();
  } catch (const nlohmann::json::exception& ex) {
    throw FormatError(path.string() + ": bad embedder config: " + ex.what());
  } catch (const ConfigError& ex) {
    throw FormatError(path.string() + ": bad embedder config: " + ex.what());
  }
  if (expected_role && cfg.role != *expected_role)
    throw FormatError(path.string() + ": embedder role '" + std::string(to_string(cfg.role)) + "', expected '" +
                      std::string(to_string(*expected_role)) + "'");
  auto e = create_embedder(cfg);
  model::assign_params(ck.params, e.params, path.string());
  return e;
}

}  // namespace anchortune::embed
