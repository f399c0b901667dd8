#include "anchortune/pipeline/experiments.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <memory>
#include <set>

#include "anchortune/error.hpp"
#include "anchortune/evaluation/identity_score.hpp"
#include "anchortune/dataset/render.hpp"
#include "anchortune/numerics/random.hpp"

namespace anchortune::pipeline {

namespace {

void say(const LogFn& log, const std::string& m) {
  if (log) log(m);
}

void require(const fs::path& p, const std::string& what, const std::string& producer) {
  if (!fs::exists(p))
    throw MissingArtifactError(what + " not found at " + p.string() + "; run `" + producer + "` first", producer);
}

struct TunedRun {
  std::string label;
  std::uint64_t seed;
  fs::path dir;
};

std::vector<TunedRun> discover(const RunLayout& L) {
  std::vector<TunedRun> out;
  if (!fs::exists(L.tune_root())) return out;
  for (const auto& label_dir : fs::directory_iterator(L.tune_root())) {
    if (!label_dir.is_directory()) continue;
    for (const auto& seed_dir : fs::directory_iterator(label_dir.path())) {
      const auto name = seed_dir.path().filename().string();
      if (name.rfind("seed-", 0) != 0 || !fs::exists(seed_dir.path() / "model.ckpt")) continue;
      out.push_back({label_dir.path().filename().string(), std::stoull(name.substr(5)), seed_dir.path()});
    }
  }
  std::sort(out.begin(), out.end(), [](const auto& a, const auto& b) {
    return std::tie(a.label, a.seed) < std::tie(b.label, b.seed);
  });
  return out;
}

struct Fixture {
  model::MatModel base;
  embed::Embedder tuning_embedder;
  embed::Embedder evaluation_embedder;
  eval::BenchmarkInputs inputs;
  std::vector<int> none_refs;  // reference indices labelled none
  std::vector<Tensor<float>> leak_images, leak_masks, leak_regions;
  std::vector<Tensor<float>> off_images, off_masks;
};

std::unique_ptr<Fixture> load_fixture(const RunConfig& c) {
  const auto L = layout(c);
  const auto paths = data::corpus_paths(L.data());
  require(paths.person, "person manifest", "gen-data");
  require(paths.off_identity, "off-identity manifest", "gen-data");
  require(L.pretrain_checkpoint(), "pre-trained checkpoint", "pretrain");
  require(L.tuning_embedder(), "tuning embedder", "train-embedders");
  require(L.evaluation_embedder(), "evaluation embedder", "train-embedders");
  auto fp = std::make_unique<Fixture>(Fixture{model::load_mat(L.pretrain_checkpoint()),
                                               embed::load_embedder(L.tuning_embedder(), embed::Role::Tuning),
                                               embed::load_embedder(L.evaluation_embedder(), embed::Role::Evaluation),
                                               {}, {}, {}, {}, {}, {}, {}});
  auto& f = *fp;
  const int S = f.base.config.image_size;
  const auto person = data::load_manifest(paths.person);
  if (person.image_size != S)
    throw DomainError("corpus resolution " + std::to_string(person.image_size) + " does not match model resolution " +
                      std::to_string(S));
  const int id = data::person_identity(person);
  const auto refs = data::load_records(paths.person, person.select(data::Split::Train, id));
  const auto tests = data::load_records(paths.person, person.select(data::Split::Test, id));
  auto& in = f.inputs;
  for (std::size_t i = 0; i < refs.size(); ++i) {
    in.references.push_back(refs[i].image);
    in.ground_truth.push_back(refs[i].image);
    if (refs[i].record->group == "none") f.none_refs.push_back(static_cast<int>(i));
  }
  for (const auto& t : tests) {
    if (!t.mask) throw FormatError("test record " + t.record->path + " has no fixed mask");
    in.test_images.push_back(t.image);
    in.test_masks.push_back(*t.mask);
    in.ground_truth.push_back(t.image);
    if (t.record->nuisance.accessory == data::Accessory::None) {
      f.leak_images.push_back(t.image);
      f.leak_masks.push_back(eval::eye_hole_mask(*t.record, S, c.evaluation.eye_margin));
      f.leak_regions.push_back(eval::eye_region(*t.record, S));
    }
  }
  const auto off = data::load_manifest(paths.off_identity);
  for (const auto& o : data::load_records(paths.off_identity, off.select(std::nullopt))) {
    if (!o.mask) throw FormatError("off-identity record " + o.record->path + " has no fixed mask");
    f.off_images.push_back(o.image);
    f.off_masks.push_back(*o.mask);
  }
  in.tuning_embedder = &f.tuning_embedder;
  in.evaluation_embedder = &f.evaluation_embedder;
  in.style = c.style;
  in.blend = c.blend;
  return fp;
}

// Plain inpaintings (no style optimization, no blending) with explicit starts.
std::vector<Tensor<float>> plain_outputs(const model::MatModel& m, const std::vector<Tensor<float>>& images,
                                         const std::vector<Tensor<float>>& masks,
                                         const std::vector<std::vector<float>>& styles, std::uint64_t seed) {
  std::vector<Tensor<float>> out;
  for (std::size_t i = 0; i < images.size(); ++i) {
    inference::InpaintRequest q;
    q.image = &images[i];
    q.mask = &masks[i];
    q.model = &m;
    q.initial_style = &styles[i];
    q.style.steps = 0;
    q.blend = false;
    q.seed = make_rng(seed, {0x1ea, i})();
    out.push_back(inference::inpaint(q).composited);
  }
  return out;
}

std::vector<std::vector<float>> fresh_styles(const model::MatModel& base, std::size_t n, std::uint64_t seed,
                                             std::uint64_t stream) {
  std::vector<std::vector<float>> out;
  for (std::size_t i = 0; i < n; ++i) out.push_back(inference::initial_style(base, nullptr, make_rng(seed, {stream, i})()));
  return out;
}

std::vector<double> leak_per_image(const Fixture& f, const std::vector<Tensor<float>>& outputs) {
  std::vector<double> out;
  for (std::size_t i = 0; i < outputs.size(); ++i)
    out.push_back(data::eye_luminance_deficit(outputs[i], f.leak_images[i], f.leak_regions[i]));
  return out;
}

double mean_of(const std::vector<double>& v) {
  if (v.empty()) return std::numeric_limits<double>::quiet_NaN();
  double s = 0;
  for (double x : v) s += x;
  return s / static_cast<double>(v.size());
}

std::string row_label(const std::string& label) { return label.rfind("MAT", 0) == 0 ? label : "PATMAT-" + label; }

}  // namespace

EvaluationData evaluate_run(const RunConfig& c, const LogFn& log) {
  c.validate();
  const auto L = layout(c);
  const auto fixture = load_fixture(c);
  const auto runs = discover(L);
  if (runs.empty()) throw MissingArtifactError("no tuned models under " + L.tune_root().string() + "; run `tune` first", "tune");
  const auto& f = *fixture;
  std::set<std::uint64_t> seeds;
  for (const auto& r : runs) seeds.insert(r.seed);

  EvaluationData d;
  for (const auto seed : seeds) {
    auto in = f.inputs;
    in.seed = seed;
    const auto off_styles = fresh_styles(f.base, f.off_images.size(), seed, 0x0ff);
    const auto leak_fresh = fresh_styles(f.base, f.leak_images.size(), seed, 0x1ea);
    const auto base_off = plain_outputs(f.base, f.off_images, f.off_masks, off_styles, seed);

    say(log, "seed " + std::to_string(seed) + ": base model");
    ModelScores base{"MAT", seed, {}, 0, {}};
    base.row = eval::score_outputs("MAT", eval::inpaint_test_set({"MAT", &f.base, nullptr, false}, in), in);
    base.leak = leak_per_image(f, plain_outputs(f.base, f.leak_images, f.leak_masks, leak_fresh, seed));
    d.scores.push_back(base);
    ModelScores base_opt{"MAT+opt", seed, {}, 0, {}};
    base_opt.row = eval::score_outputs("MAT+opt", eval::inpaint_test_set({"MAT+opt", &f.base, nullptr, true}, in), in);
    d.scores.push_back(base_opt);

    for (const auto& r : runs) {
      if (r.seed != seed) continue;
      say(log, "seed " + std::to_string(seed) + ": " + r.label);
      const auto m = model::load_mat(r.dir / "model.ckpt");
      if (m.config.image_size != f.base.config.image_size)
        throw DomainError(r.dir.string() + ": model resolution differs from the corpus");
      const auto anchors = tuning::AnchorStore::load(r.dir / "anchors.json");
      const bool has_refs = anchors.contains(tuning::base_anchor_id(0));
      ModelScores s{r.label, seed, {}, 0, {}};
      s.row = eval::score_outputs(r.label, eval::inpaint_test_set({r.label, &m, has_refs ? &anchors : nullptr, true}, in), in);
      s.frechet_gap = eval::frechet_gap(f.evaluation_embedder, plain_outputs(m, f.off_images, f.off_masks, off_styles, seed),
                                        base_off);
      auto leak_styles = leak_fresh;
      if (has_refs && !f.none_refs.empty())
        for (std::size_t i = 0; i < leak_styles.size(); ++i)
          leak_styles[i] = anchors.at(tuning::base_anchor_id(f.none_refs[i % f.none_refs.size()])).s_u;
      s.leak = leak_per_image(f, plain_outputs(m, f.leak_images, f.leak_masks, leak_styles, seed));
      d.scores.push_back(std::move(s));
    }
  }

  auto& rep = d.report;
  rep.seeds.assign(seeds.begin(), seeds.end());
  auto located = c;
  located.output.clear();  // same settings in another directory give the same report
  rep.config_digest = eval::digest(run_config_json(located));
  {
    auto in = f.inputs;
    rep.ground_truth = eval::score_outputs("ground truth (train + test)", in.test_images, in);
  }
  std::vector<std::string> labels{"MAT", "MAT+opt"};
  for (const auto& r : runs)
    if (std::find(labels.begin(), labels.end(), r.label) == labels.end()) labels.push_back(r.label);
  for (const auto& label : labels) {
    double fr = 0, id = 0;
    int n = 0;
    for (const auto& s : d.scores)
      if (s.label == label) {
        rep.rows.push_back({row_label(label) + " [seed " + std::to_string(s.seed) + "]", s.row.frechet, s.row.identity});
        fr += s.row.frechet;
        id += s.row.identity;
        ++n;
      }
    rep.rows.push_back({row_label(label) + " (mean)", fr / n, id / n});
    if (label != "MAT+opt") {
      rep.metrics["leak/" + row_label(label)] = mean_leak(d, label);
      if (label != "MAT") rep.metrics["gap/" + row_label(label)] = mean_gap(d, label);
    }
  }
  return d;
}

namespace {

template <typename F>
double mean_over(const EvaluationData& d, const std::string& label, F value) {
  double s = 0;
  int n = 0;
  for (const auto& x : d.scores)
    if (x.label == label) {
      s += value(x);
      ++n;
    }
  return n ? s / n : std::numeric_limits<double>::quiet_NaN();
}

}  // namespace

double mean_identity(const EvaluationData& d, const std::string& label) {
  return mean_over(d, label, [](const ModelScores& s) { return s.row.identity; });
}
double mean_gap(const EvaluationData& d, const std::string& label) {
  return mean_over(d, label, [](const ModelScores& s) { return s.frechet_gap; });
}
double mean_leak(const EvaluationData& d, const std::string& label) {
  return mean_over(d, label, [](const ModelScores& s) { return mean_of(s.leak); });
}

double leak_difference_se(const EvaluationData& d, const std::string& a, const std::string& b) {
  std::vector<double> diffs;
  for (const auto& x : d.scores) {
    if (x.label != a) continue;
    for (const auto& y : d.scores)
      if (y.label == b && y.seed == x.seed && y.leak.size() == x.leak.size())
        for (std::size_t i = 0; i < x.leak.size(); ++i) diffs.push_back(x.leak[i] - y.leak[i]);
  }
  if (diffs.size() < 2) return std::numeric_limits<double>::quiet_NaN();
  const double m = mean_of(diffs);
  double v = 0;
  for (double x : diffs) v += (x - m) * (x - m);
  v /= static_cast<double>(diffs.size() - 1);
  return std::sqrt(v / static_cast<double>(diffs.size()));
}

std::vector<tuning::TuningConfig> suite_variants(const tuning::TuningConfig& base) {
  std::vector<tuning::TuningConfig> out;
  auto s = base;
  s.variant = tuning::Variant::S;
  out.push_back(s);
  auto cc = base;
  cc.variant = tuning::Variant::C;
  out.push_back(cc);
  auto noreg = cc;
  noreg.lambda_reg = 0;
  out.push_back(noreg);
  auto single = cc;
  single.grouping = false;
  out.push_back(single);
  auto none = base;
  none.variant = tuning::Variant::NoAnchor;
  out.push_back(none);
  return out;
}

EvaluationData run_suite(const RunConfig& c, const LogFn& log) {
  c.validate();
  const auto L = layout(c);
  if (!fs::exists(data::corpus_paths(L.data()).person)) gen_data(c, log);
  if (!fs::exists(L.pretrain_checkpoint())) pretrain(c, log);
  if (!fs::exists(L.tuning_embedder()) || !fs::exists(L.evaluation_embedder())) train_embedders(c, log);
  for (const auto seed : c.evaluation.seeds)
    for (auto t : suite_variants(c.tuning)) {
      t.seed = seed;
      if (fs::exists(L.tune_dir(tune_label(t), seed) / "model.ckpt")) continue;
      auto rc = c;
      rc.tuning = t;
      tune(rc, log);
    }
  auto d = evaluate_run(c, log);
  eval::save_report(L.eval_dir(), d.report);
  archive_config(L.eval_dir(), c);
  return d;
}

}  // namespace anchortune::pipeline
