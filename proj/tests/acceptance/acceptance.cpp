// Acceptance run: one PASS/FAIL line per criterion, exit status 1 if any fails.

#include <CLI11.hpp>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <functional>
#include <map>
#include <set>
#include <sstream>

#include <Eigen/Dense>

#include "anchortune/error.hpp"
#include "anchortune/evaluation/frechet.hpp"
#include "anchortune/inference/inpaint.hpp"
#include "anchortune/inference/poisson.hpp"
#include "anchortune/pipeline/commands.hpp"
#include "anchortune/pipeline/experiments.hpp"
#include "anchortune/tuning/tuning.hpp"
#include "gradcheck.hpp"
#include "poisson_oracle.hpp"
#include "primitive_cases.hpp"
#include "tiny_fixture.hpp"

using namespace anchortune;
namespace fs = std::filesystem;
using Clock = std::chrono::steady_clock;

namespace {

struct Outcome {
  bool pass = false;
  std::string detail;
};

double seconds_since(Clock::time_point t0) { return std::chrono::duration<double>(Clock::now() - t0).count(); }

std::string fmt(const char* f, auto... args) {
  char buf[512];
  std::snprintf(buf, sizeof buf, f, args...);
  return buf;
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  if (!in) throw IoError("cannot read " + p.string());
  return {std::istreambuf_iterator<char>(in), {}};
}

// --- 1 ---------------------------------------------------------------------

Outcome gradients() {
  const auto t0 = Clock::now();
  double worst = 0;
  std::string worst_name;
  int checked = 0;
  auto note = [&](const std::string& name, double e) {
    ++checked;
    if (e > worst || std::isnan(e)) worst = e, worst_name = name;
  };
  for (const auto& c : testing::primitive_cases()) note(c.name, testing::grad_check(c.fn, c.inputs).max_rel_error);

  const auto cfg = testing::tiny_config();
  const auto fe = testing::tiny_fe();
  auto params = model::init_mat_params(cfg).cast<double>();
  auto rng = make_rng(77);
  // move biases off zero so no activation sits on the leaky-relu kink
  for (auto& e : params.entries())
    if (e.name.ends_with(".b"))
      for (auto& v : e.tensor.data()) v += std::normal_distribution<double>(0.0, 0.05)(rng);
  const auto x = testing::image_batch<double>(2, 16, 9);
  const auto b = testing::mask_batch<double>(2, 16, 2);
  const auto z = testing::rnd({2, 8}, 4);
  const auto B = model::sample_feature_mask<double>(cfg, 2, 6);
  for (const std::string group : {"map.", "enc.", "attn.", "fuse.", "dec."}) {
    std::vector<std::string> names;
    std::vector<Tensor<double>> inputs;
    for (const auto& e : params.entries())
      if (e.name.rfind(group, 0) == 0 && e.name != "attn.k.b") {
        names.push_back(e.name);
        inputs.push_back(e.tensor);
      }
    const auto r = testing::grad_check(
        [&](Tape<double>& t, const std::vector<Var<double>>& in) {
          Bound<double> p(t, params);
          for (std::size_t i = 0; i < names.size(); ++i) p.bind(names[i], in[i]);
          const auto xv = t.constant(x);
          const auto y = model::forward(cfg, p, xv, t.constant(b), model::map_noise(cfg, p, t.constant(z)), t.constant(B));
          return model::reconstruction_loss(fe, xv, y);
        },
        inputs);
    note("reconstruction loss wrt " + group + "*", r.max_rel_error);
  }
  const double secs = seconds_since(t0);
  return {worst < 1e-4 && secs < 120,
          fmt("%d checks, worst relative error %.2e (%s), %.1f s", checked, worst, worst_name.c_str(), secs)};
}

// --- 2 ---------------------------------------------------------------------

Outcome exact_identities() {
  const auto cfg = testing::tiny_config();
  const auto params = model::init_mat_params(cfg);
  int trials = 0, failures = 0;
  for (std::uint64_t seed = 0; seed < 20; ++seed) {
    Tape<float> tape;
    const Bound<float> p(tape, params);
    auto rng = make_rng(seed, {0xacc});
    const int n = 1 + static_cast<int>(seed % 3);
    const auto X1 = tape.constant(randn<float>({n, 8, 2, 2}, rng));
    const auto X2 = tape.constant(randn<float>({n, 8, 2, 2}, rng));
    const auto s1 = tape.constant(randn<float>({n, 8}, rng, 3.0));
    const auto s2 = tape.constant(randn<float>({n, 8}, rng, 3.0));
    const auto ones = tape.constant(Tensor<float>({n, 1, 2, 2}, 1.0f));
    const auto zeros = tape.constant(Tensor<float>({n, 1, 2, 2}, 0.0f));
    failures += !(model::fuse_styles(cfg, p, X1, ones, s1).s_c.value() ==
                  model::fuse_styles(cfg, p, X1, ones, s2).s_c.value());
    failures += !(model::fuse_styles(cfg, p, X1, zeros, s1).s_c.value() ==
                  model::fuse_styles(cfg, p, X2, zeros, s1).s_c.value());

    const int cin = 1 + static_cast<int>(rng() % 5), cout = 1 + static_cast<int>(rng() % 5), k = seed % 2 ? 3 : 1;
    const auto x = tape.constant(randn<float>({n, cin, 7, 6}, rng));
    const auto W = tape.constant(randn<float>({cout, cin, k, k}, rng));
    const auto bias = tape.constant(randn<float>({cout}, rng));
    const auto unit = tape.constant(Tensor<float>({n, cin}, 1.0f));
    failures += !(model::modulated_conv(x, W, bias, unit, k / 2, false).value() ==
                  ops::conv2d(x, W, bias, 1, k / 2).value());
    trials += 3;
  }
  return {failures == 0, fmt("%d/%d bit-exact (B = 1, B = 0, unit style)", trials - failures, trials)};
}

// --- 3 ---------------------------------------------------------------------

Outcome poisson() {
  const auto t0 = Clock::now();
  double worst = 0, offset_err = 0;
  int cases = 0;
  for (std::uint64_t seed = 0; seed < 24; ++seed) {
    auto rng = make_rng(seed, {0x9015});
    const int h = 6 + static_cast<int>(rng() % 11), w = 6 + static_cast<int>(rng() % 11);
    const int c = 1 + static_cast<int>(rng() % 3);
    const auto target = randn<float>({c, h, w}, rng, 0.5);
    const auto source = randn<float>({c, h, w}, rng, 0.5);
    Tensor<float> mask({1, h, w}, 1.0f);
    if (seed % 2 == 0 && h == w) {
      mask = data::generate_mask({data::MaskKind::FreeForm, 0.3, seed, false}, h);
    } else {
      const int y0 = static_cast<int>(rng() % (h - 2)), x0 = static_cast<int>(rng() % (w - 2));
      const int y1 = y0 + 1 + static_cast<int>(rng() % (h - y0 - 1)), x1 = x0 + 1 + static_cast<int>(rng() % (w - x0 - 1));
      for (int y = y0; y < y1; ++y)
        for (int x = x0; x < x1; ++x) mask[static_cast<std::size_t>(y) * w + x] = 0.0f;
    }
    const auto r = inference::poisson_blend({target, source, mask});
    for (int k = 0; k < c; ++k) {
      const auto ref = testing::dense_solution(target, source, mask, k);
      for (int i = 0; i < h * w; ++i)
        worst = std::max(worst, std::abs(double(r.image[static_cast<std::size_t>(k) * h * w + i]) - ref[i]));
    }
    auto shifted = target;
    const float off = static_cast<float>(uniform(rng, -1.0, 1.0));
    for (auto& v : shifted.data()) v += off;
    const auto o = inference::poisson_blend({target, shifted, mask});
    for (std::size_t i = 0; i < target.size(); ++i) offset_err = std::max(offset_err, double(std::abs(o.image[i] - target[i])));
    ++cases;
  }
  const double secs = seconds_since(t0);
  return {worst < 1e-6 && offset_err < 1e-6 && secs < 30,
          fmt("%d random holes, max |CG - dense| %.2e, constant offset error %.2e, %.2f s", cases, worst, offset_err, secs)};
}

// --- 4 ---------------------------------------------------------------------

Outcome frechet() {
  const auto t0 = Clock::now();
  const int n = 5000, d = 8;
  // shared eigenbasis Q, so the closed form reduces to per-axis terms
  auto rng = make_rng(4242);
  std::normal_distribution<double> g;
  Eigen::MatrixXd raw(d, d);
  for (int i = 0; i < d * d; ++i) raw.data()[i] = g(rng);
  const Eigen::MatrixXd Q = Eigen::HouseholderQR<Eigen::MatrixXd>(raw).householderQ();
  Eigen::VectorXd la(d), lb(d), ma(d), mb(d);
  for (int k = 0; k < d; ++k) {
    la(k) = 0.25 + 2.0 * (k % 4) / 3.0;
    lb(k) = 0.5 + (7 - k) * 0.3;
    ma(k) = 0.0;
    mb(k) = k % 3 == 0 ? 1.0 : -0.25;
  }
  auto sample = [&](const Eigen::VectorXd& lam, const Eigen::VectorXd& mean) {
    Tensor<double> t({n, d});
    for (int i = 0; i < n; ++i) {
      Eigen::VectorXd u(d);
      for (int k = 0; k < d; ++k) u(k) = std::sqrt(lam(k)) * g(rng);
      const Eigen::VectorXd v = Q * u + mean;
      for (int k = 0; k < d; ++k) t[static_cast<std::size_t>(i) * d + k] = v(k);
    }
    return t;
  };
  const auto a = sample(la, ma), b = sample(lb, mb);
  double expected = (ma - mb).squaredNorm();
  for (int k = 0; k < d; ++k) expected += std::pow(std::sqrt(la(k)) - std::sqrt(lb(k)), 2);
  const double got = eval::frechet_distance(a, b);
  const double same = eval::frechet_distance(a, a);
  const double rel = std::abs(got - expected) / expected;
  const double secs = seconds_since(t0);
  return {rel <= 0.10 && std::abs(same) < 1e-6 && secs < 60,
          fmt("FD %.4f vs closed form %.4f (%.2f%%), identical sets %.2e, %.2f s", got, expected, 100 * rel, same, secs)};
}

// --- 5-7 -------------------------------------------------------------------

struct SuiteResult {
  pipeline::EvaluationData data;
  double seconds = 0;
};

Outcome identity_ordering(const SuiteResult& s) {
  const auto& d = s.data;
  const double base = pipeline::mean_identity(d, "MAT"), opt = pipeline::mean_identity(d, "MAT+opt");
  const double S = pipeline::mean_identity(d, "S"), C = pipeline::mean_identity(d, "C");
  const bool pass = C >= S && S >= base + 0.05 && C >= base + 0.10 && s.seconds < 3600;
  return {pass, fmt("C %.4f, S %.4f, base %.4f (base + style opt %.4f), %zu seeds, suite %.0f s", C, S, base, opt,
                    d.report.seeds.size(), s.seconds)};
}

Outcome regularization_gap(const SuiteResult& s) {
  const double reg = pipeline::mean_gap(s.data, "C"), noreg = pipeline::mean_gap(s.data, "C-noreg");
  return {reg < noreg, fmt("off-identity Frechet gap: lambda 1 %.4f, lambda 0 %.4f", reg, noreg)};
}

Outcome leak_ordering(const SuiteResult& s) {
  const auto& d = s.data;
  const double grouped = pipeline::mean_leak(d, "C"), single = pipeline::mean_leak(d, "C-single"),
               none = pipeline::mean_leak(d, "no-anchor");
  // "within noise": two paired standard errors of the per-image difference
  const double tol_gs = 2 * pipeline::leak_difference_se(d, "C", "C-single");
  const double tol_sn = 2 * pipeline::leak_difference_se(d, "C-single", "no-anchor");
  const bool pass = grouped <= single + tol_gs && single <= none + tol_sn;
  return {pass, fmt("grouped %.4f, single %.4f, no-anchor %.4f (noise 2SE: %.4f, %.4f), base %.4f", grouped, single,
                    none, tol_gs, tol_sn, pipeline::mean_leak(d, "MAT"))};
}

// --- 8 ---------------------------------------------------------------------

Outcome anchor_mechanics(const fs::path& run) {
  const auto t0 = Clock::now();
  std::vector<std::string> failures;
  auto expect = [&](bool ok, const std::string& what) {
    if (!ok) failures.push_back(what);
  };

  // pair counts on the generated reference set, oracle from raw record labels
  const auto manifest = data::load_manifest(data::corpus_paths(run / "data").person);
  const int id = data::person_identity(manifest);
  std::map<std::string, std::size_t> per_label;
  std::size_t X = 0;
  for (const auto& r : manifest.records)
    if (r.split == data::Split::Train && r.identity == id) ++per_label[r.group], ++X;
  std::size_t sum_sq = 0;
  for (const auto& [_, n] : per_label) sum_sq += n * n;
  const auto groups = tuning::group_references(manifest, id);
  const auto s_pairs = tuning::enumerate_pairs(groups, tuning::Variant::S).size();
  const auto c_pairs = tuning::enumerate_pairs(groups, tuning::Variant::C).size();
  expect(s_pairs == X, "S pairs");
  expect(c_pairs == sum_sq, "C pairs");

  // anchors before and after a short tuning run
  const auto m = model::MatModel::create(testing::tiny_config());
  const auto fe = testing::tiny_fe();
  const auto refs = testing::image_list(5, 16, 60);
  std::vector<tuning::ReferenceGroup> small{{"glasses", {0, 1}}, {"none", {2, 3, 4}}};
  tuning::TuningConfig cfg;
  cfg.steps = 4;
  cfg.reg_batch = 2;
  auto store = tuning::prepare_anchors(m, fe, refs, small, cfg);
  const auto masks = testing::mask_batch<float>(2, 16, 5);
  const auto reg = tuning::make_regularization_set(m, testing::image_list(2, 16, 80),
                                                   {model::unstack(masks, 0), model::unstack(masks, 1)}, store, 1);
  const auto before = store.to_json();
  tuning::tune(m, fe, refs, small, store, reg, cfg);
  expect(store.to_json() == before, "anchors changed by tuning");

  // sigma = 0 collapses every perturbed anchor onto its parent
  tuning::AnchorStore flat;
  for (auto& a : tuning::init_anchors_random(m, 5, 3)) flat.add(a);
  tuning::build_anchor_clusters(small, flat, 0.0, 9);
  std::size_t perturbed = 0;
  for (const auto& a : flat.anchors())
    if (!a.parent.empty()) {
      ++perturbed;
      expect(a.s_u == flat.at(a.parent).s_u, "sigma 0 anchor " + a.id);
    }
  expect(perturbed == 2 * 1 + 3 * 2, "cluster size");

  const double secs = seconds_since(t0);
  std::string detail = fmt("S pairs %zu = |X| %zu, C pairs %zu = sum |X_m|^2 %zu, %zu collapsed anchors, %.2f s",
                           s_pairs, X, c_pairs, sum_sq, perturbed, secs);
  for (const auto& f : failures) detail += "; failed: " + f;
  return {failures.empty() && secs < 1.0, detail};
}

// --- 9 ---------------------------------------------------------------------

Outcome style_contract(const fs::path& run, std::uint64_t seed) {
  const pipeline::RunLayout L{run};
  const auto dir = L.tune_dir("C", seed);
  const auto m = model::load_mat(dir / "model.ckpt");
  const auto anchors = tuning::AnchorStore::load(dir / "anchors.json");
  const auto e = embed::load_embedder(L.tuning_embedder(), embed::Role::Tuning);
  const auto msum = m.params.checksum(), esum = e.params.checksum();
  const auto paths = data::corpus_paths(L.data());
  const auto manifest = data::load_manifest(paths.person);
  const int id = data::person_identity(manifest);
  const auto refs = data::load_records(paths.person, manifest.select(data::Split::Train, id));
  const auto tests = data::load_records(paths.person, manifest.select(data::Split::Test, id));
  const inference::StyleOptConfig style;
  int ok = 0, n = 0;
  double mean_drop = 0;
  for (std::size_t i = 0; i < tests.size(); ++i) {
    auto rng = make_rng(seed, {0x5c, i});
    const auto& xp = refs[rng() % refs.size()].image;
    const auto start = inference::initial_style(m, &anchors, rng());
    const auto B = model::sample_feature_mask<float>(m.config, 1, rng());
    const auto r = inference::optimize_style_for_identity(m, tests[i].image, *tests[i].mask, xp, e, start, B,
                                                          style.steps, style.learning_rate);
    ++n;
    ok += !r.non_finite && r.losses.size() == static_cast<std::size_t>(style.steps + 1) &&
          r.best_loss <= r.losses.front();
    mean_drop += r.losses.front() - r.best_loss;
  }
  const bool unchanged = m.params.checksum() == msum && e.params.checksum() == esum;
  return {ok == n && n > 0 && unchanged,
          fmt("%d/%d images best <= initial over %d steps (mean loss drop %.4f), checksums %s", ok, n, style.steps,
              mean_drop / std::max(n, 1), unchanged ? "unchanged" : "CHANGED")};
}

// --- 10 --------------------------------------------------------------------

pipeline::RunConfig small_config(const fs::path& dir) {
  pipeline::RunConfig c;
  c.output = dir.string();
  for (const auto& [k, v] : std::vector<std::pair<std::string, std::string>>{
           {"corpus.pretrain_identities", "3"}, {"corpus.renders_per_identity", "6"},
           {"corpus.holdout_per_identity", "2"}, {"corpus.references", "8"}, {"corpus.test_images", "4"},
           {"corpus.reg_images", "4"}, {"corpus.off_identity_images", "4"}, {"corpus.off_identity_count", "2"},
           {"pretrain.steps", "30"}, {"tuning_embedder.epochs", "2"}, {"tuning_embedder.min_separation", "-2"},
           {"evaluation_embedder.epochs", "2"}, {"evaluation_embedder.min_separation", "-2"},
           {"tuning.steps", "12"}, {"tuning.anchor_init_steps", "3"}, {"style.steps", "3"},
           {"evaluation.seeds", "[1, 2]"}})
    pipeline::set_field(c, k, v);
  return c;
}

Outcome determinism(const fs::path& work) {
  std::vector<std::string> failures;
  auto expect = [&](bool ok, const std::string& what) {
    if (!ok) failures.push_back(what);
  };
  const auto a = small_config(work / "det-a"), b = small_config(work / "det-b");
  fs::remove_all(a.output);
  fs::remove_all(b.output);
  pipeline::run_suite(a);
  pipeline::run_suite(b);

  int compared = 0;
  for (const auto& entry : fs::recursive_directory_iterator(a.output)) {
    if (!entry.is_regular_file()) continue;
    const auto rel = fs::relative(entry.path(), a.output);
    const auto ext = rel.extension().string();
    if (ext != ".ckpt" && ext != ".json" && ext != ".txt" && ext != ".jsonl" && ext != ".png") continue;
    if (rel.filename() == "config.json") continue;  // records its own output path
    ++compared;
    const auto other = fs::path(b.output) / rel;
    expect(fs::exists(other) && slurp(entry.path()) == slurp(other), "differs: " + rel.string());
  }

  // lossless round trips
  const pipeline::RunLayout L{a.output};
  const auto ckpt = L.tune_dir("C", 1) / "model.ckpt";
  {
    const auto bytes = slurp(ckpt);
    const auto ck = model::decode_checkpoint(bytes);
    expect(model::encode_checkpoint(ck.kind, ck.meta, ck.params) == bytes, "checkpoint round trip");
    const auto m = model::load_mat(ckpt);
    expect(m.params == ck.params, "checkpoint parameters");
  }
  const auto mpath = data::corpus_paths(L.data()).person;
  expect(data::manifest_to_json(data::load_manifest(mpath)) == slurp(mpath), "manifest round trip");
  const auto apath = L.tune_dir("C", 1) / "anchors.json";
  expect(tuning::AnchorStore::from_json(slurp(apath)).to_json() == slurp(apath), "anchor store round trip");
  const auto rpath = L.eval_dir() / "report.json";
  expect(eval::report_json(eval::report_from_json(slurp(rpath))) == slurp(rpath), "report round trip");

  // unknown and missing fields
  auto rejects = [&](const std::string& what, const std::function<void()>& fn) {
    try {
      fn();
      failures.push_back("accepted " + what);
    } catch (const Error&) {
    }
  };
  auto mj = nlohmann::json::parse(slurp(mpath));
  mj["records"][0]["extra"] = 1;
  rejects("manifest unknown field", [&] { data::manifest_from_json(mj.dump()); });
  mj = nlohmann::json::parse(slurp(mpath));
  mj["records"][0].erase("split");
  rejects("manifest missing field", [&] { data::manifest_from_json(mj.dump()); });
  auto aj = nlohmann::json::parse(slurp(apath));
  aj["anchors"][0]["extra"] = 1;
  rejects("anchor unknown field", [&] { tuning::AnchorStore::from_json(aj.dump()); });
  aj = nlohmann::json::parse(slurp(apath));
  aj["anchors"][0].erase("s_u");
  rejects("anchor missing field", [&] { tuning::AnchorStore::from_json(aj.dump()); });
  auto rj = nlohmann::json::parse(slurp(rpath));
  rj["extra"] = 1;
  rejects("report unknown field", [&] { eval::report_from_json(rj.dump()); });
  auto cj = nlohmann::json::parse(pipeline::run_config_json(a));
  cj["tuning"]["extra"] = 1;
  rejects("config unknown field", [&] { cj.get<pipeline::RunConfig>(); });
  auto bytes = slurp(ckpt);
  const auto header = model::decode_checkpoint(bytes);
  auto write_meta = [&](const nlohmann::json& meta) {
    const auto p = work / "edited.ckpt";
    std::ofstream(p, std::ios::binary) << model::encode_checkpoint(header.kind, meta, header.params);
    return p;
  };
  auto meta = header.meta;
  meta["config"]["extra"] = 1;
  rejects("checkpoint config unknown field", [&] { model::load_mat(write_meta(meta)); });
  meta = header.meta;
  meta["config"].erase("style_dim");
  rejects("checkpoint config missing field", [&] { model::load_mat(write_meta(meta)); });
  bytes.resize(bytes.size() - 3);
  rejects("truncated checkpoint", [&] { model::decode_checkpoint(bytes); });

  std::string detail = fmt("%d artifacts byte-identical across reruns, round trips and field rejection checked", compared);
  for (const auto& f : failures) detail += "; " + f;
  return {failures.empty() && compared > 0, detail};
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"acceptance criteria"};
  std::string work = ANCHORTUNE_ACCEPTANCE_DIR;
  bool fresh = false;
  std::vector<int> only;
  app.add_option("--workdir", work, "scratch directory; the suite run is reused when present");
  app.add_flag("--fresh", fresh, "delete the scratch directory first");
  app.add_option("--only", only, "criteria to run")->delimiter(',');
  CLI11_PARSE(app, argc, argv);

  const fs::path root = fs::absolute(work);
  if (fresh) fs::remove_all(root);
  fs::create_directories(root);
  const auto run = root / "suite";
  auto wanted = [&](int k) { return only.empty() || std::find(only.begin(), only.end(), k) != only.end(); };

  std::optional<SuiteResult> suite;
  auto need_suite = [&]() -> const SuiteResult& {
    if (!suite) {
      pipeline::RunConfig c;
      c.output = run.string();
      const auto t0 = Clock::now();
      auto d = pipeline::run_suite(c, [](const std::string& s) { std::fprintf(stderr, "  %s\n", s.c_str()); });
      suite = SuiteResult{std::move(d), seconds_since(t0)};
    }
    return *suite;
  };

  const std::vector<std::pair<int, std::function<Outcome()>>> criteria{
      {1, gradients},
      {2, exact_identities},
      {3, poisson},
      {4, frechet},
      {5, [&] { return identity_ordering(need_suite()); }},
      {6, [&] { return regularization_gap(need_suite()); }},
      {7, [&] { return leak_ordering(need_suite()); }},
      {8, [&] { need_suite(); return anchor_mechanics(run); }},
      {9, [&] { need_suite(); return style_contract(run, 1); }},
      {10, [&] { return determinism(root); }},
  };
  int failed = 0;
  for (const auto& [k, fn] : criteria) {
    if (!wanted(k)) continue;
    Outcome o;
    try {
      o = fn();
    } catch (const std::exception& e) {
      o = {false, std::string("error: ") + e.what()};
    }
    failed += !o.pass;
    std::printf("criterion %2d: %s  %s\n", k, o.pass ? "PASS" : "FAIL", o.detail.c_str());
    std::fflush(stdout);
  }
  return failed ? 1 : 0;
}
