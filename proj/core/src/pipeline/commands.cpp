#include "anchortune/pipeline/commands.hpp"

#include <fstream>
#include <sstream>

#include "anchortune/dataset/image_io.hpp"
#include "anchortune/error.hpp"
#include "anchortune/inference/poisson.hpp"
#include "anchortune/model/feature_extractor.hpp"
#include "anchortune/pipeline/experiments.hpp"

namespace anchortune::pipeline {

using nlohmann::json;

namespace {

void say(const LogFn& log, const std::string& m) {
  if (log) log(m);
}

void require(const fs::path& p, const std::string& what, const std::string& producer) {
  if (!fs::exists(p))
    throw MissingArtifactError(what + " not found at " + p.string() + "; run `" + producer + "` first", producer);
}

void write_text(const fs::path& p, const std::string& text) {
  if (p.has_parent_path()) fs::create_directories(p.parent_path());
  std::ofstream out(p, std::ios::binary);
  if (!out) throw IoError("cannot write " + p.string());
  out << text;
  if (!out) throw IoError("write failed for " + p.string());
}

std::vector<Tensor<float>> images_of(const std::vector<data::LoadedImage>& l) {
  std::vector<Tensor<float>> out;
  for (const auto& x : l) out.push_back(x.image);
  return out;
}

std::vector<embed::LabeledImage> labeled(const std::vector<data::LoadedImage>& l) {
  std::vector<embed::LabeledImage> out;
  for (const auto& x : l) out.push_back({&x.image, x.record->identity});
  return out;
}

}  // namespace

RunLayout layout(const RunConfig& c) { return {run_directory(c)}; }

std::string tune_label(const tuning::TuningConfig& t) {
  std::string s(tuning::to_string(t.variant));
  if (t.variant != tuning::Variant::NoAnchor && !t.grouping) s += "-single";
  if (t.variant == tuning::Variant::C && !t.clustering) s += "-flat";
  if (t.lambda_reg == 0 || t.reg_batch == 0) s += "-noreg";
  if (t.variant != tuning::Variant::NoAnchor && t.anchor_init == tuning::AnchorInit::Optimized) s += "-optinit";
  return s;
}

void archive_config(const fs::path& dir, const RunConfig& c) {
  write_text(dir / "config.json", run_config_json(c));
  write_text(dir / "VERSION", std::string(kToolVersion) + "\n");
}

void gen_data(const RunConfig& c, const LogFn& log) {
  c.validate();
  const auto L = layout(c);
  const auto paths = data::build_corpus(c.corpus, L.data());
  archive_config(L.data(), c);
  say(log, "corpus written to " + L.data().string());
  for (const auto& p : {paths.pretrain, paths.person, paths.off_identity})
    say(log, "  " + p.string() + ": " + std::to_string(data::load_manifest(p).records.size()) + " records");
}

void pretrain(const RunConfig& c, const LogFn& log) {
  c.validate();
  const auto L = layout(c);
  const auto paths = data::corpus_paths(L.data());
  require(paths.pretrain, "pre-training manifest", "gen-data");
  const auto m = data::load_manifest(paths.pretrain);
  const auto train = images_of(data::load_records(paths.pretrain, m.select(data::Split::Train)));
  const auto held = images_of(data::load_records(paths.pretrain, m.select(data::Split::Test)));
  const model::FeatureExtractor fe;
  auto init = model::MatModel::create(c.model);
  const double before = held.empty() ? 0.0 : model::heldout_loss(init, held, fe, 17);
  say(log, "pre-training on " + std::to_string(train.size()) + " images, " + std::to_string(c.pretrain.steps) + " steps");
  auto res = model::pretrain(std::move(init), train, fe, c.pretrain, [&](int step, double loss) {
    if ((step + 1) % 250 == 0) say(log, "  step " + std::to_string(step + 1) + " loss " + std::to_string(loss));
  });
  const double after = held.empty() ? 0.0 : model::heldout_loss(res.model, held, fe, 17);
  say(log, "held-out loss " + std::to_string(before) + " -> " + std::to_string(after));
  model::save_mat(L.pretrain_checkpoint(), res.model,
                  {{"pretrain", c.pretrain}, {"heldout_loss", {{"initial", before}, {"final", after}}}});
  std::ostringstream losses;
  for (std::size_t i = 0; i < res.losses.size(); ++i) losses << json{{"step", i}, {"loss", res.losses[i]}}.dump() << '\n';
  write_text(L.pretrain_dir() / "losses.jsonl", losses.str());
  archive_config(L.pretrain_dir(), c);
}

void train_embedders(const RunConfig& c, const LogFn& log) {
  c.validate();
  const auto L = layout(c);
  const auto paths = data::corpus_paths(L.data());
  require(paths.pretrain, "pre-training manifest", "gen-data");
  require(paths.person, "person manifest", "gen-data");
  const auto pm = data::load_manifest(paths.pretrain);
  const auto person = data::load_manifest(paths.person);
  const int id = data::person_identity(person);
  const auto tr = data::load_records(paths.pretrain, pm.select(data::Split::Train));
  const auto ho = data::load_records(paths.pretrain, pm.select(data::Split::Test));
  const auto refs = data::load_records(paths.person, person.select(data::Split::Train, id));
  const auto tests = data::load_records(paths.person, person.select(data::Split::Test, id));
  auto train = labeled(tr);
  for (const auto& e : labeled(refs)) train.push_back(e);
  auto held = labeled(ho);
  for (const auto& e : labeled(tests)) held.push_back(e);
  for (const auto* ec : {&c.tuning_embedder, &c.evaluation_embedder}) {
    say(log, "training " + std::string(embed::to_string(ec->role)) + " embedder");
    const auto r = embed::train_embedder(*ec, train, held);
    say(log, "  held-out separation margin " + std::to_string(r.heldout.margin()));
    embed::save_embedder(ec->role == embed::Role::Tuning ? L.tuning_embedder() : L.evaluation_embedder(), r.embedder);
  }
  archive_config(L.embedder_dir(), c);
}

fs::path tune(const RunConfig& c, const LogFn& log) {
  c.validate();
  const auto L = layout(c);
  const auto paths = data::corpus_paths(L.data());
  require(paths.person, "person manifest", "gen-data");
  require(L.pretrain_checkpoint(), "pre-trained checkpoint", "pretrain");
  const auto base = model::load_mat(L.pretrain_checkpoint());
  const auto person = data::load_manifest(paths.person);
  const int id = data::person_identity(person);
  const auto refs = images_of(data::load_records(paths.person, person.select(data::Split::Train, id)));
  std::vector<Tensor<float>> reg_images, reg_masks;
  for (const auto& r : data::load_records(paths.person, person.select(data::Split::Reg))) {
    if (!r.mask) throw FormatError("reg record " + r.record->path + " has no fixed mask");
    reg_images.push_back(r.image);
    reg_masks.push_back(*r.mask);
  }
  const auto& t = c.tuning;
  const model::FeatureExtractor fe;
  const auto groups = tuning::group_references(person, id, t.grouping);
  auto store = tuning::prepare_anchors(base, fe, refs, groups, t);
  const auto reg = tuning::make_regularization_set(base, reg_images, reg_masks, store, t.seed);
  const auto label = tune_label(t);
  say(log, "tuning " + label + " (seed " + std::to_string(t.seed) + "), " + std::to_string(groups.size()) + " groups, " +
               std::to_string(t.steps) + " steps");
  const auto res = tuning::tune(base, fe, refs, groups, store, reg, t, [&](const tuning::TuneLogEntry& e) {
    if ((e.step + 1) % 200 == 0)
      say(log, "  step " + std::to_string(e.step + 1) + " ref " + std::to_string(e.ref_loss) + " reg " +
                   std::to_string(e.reg_loss));
  });
  const auto dir = L.tune_dir(label, t.seed);
  model::save_mat(dir / "model.ckpt", res.model,
                  {{"tuning", t}, {"label", label}, {"pairs_per_epoch", res.pairs_per_epoch}});
  store.save(dir / "anchors.json");
  tuning::write_tune_log(dir / "log.jsonl", res.log);
  archive_config(dir, c);
  say(log, "wrote " + dir.string());
  return dir;
}

void inpaint(const RunConfig& c, const InpaintArgs& a, const LogFn& log) {
  c.validate();
  const auto L = layout(c);
  const auto image = data::read_image_png(a.image);
  const auto mask = data::read_mask_png(a.mask);
  model::MatModel m;
  std::optional<tuning::AnchorStore> anchors;
  if (a.tuned.empty()) {
    require(L.pretrain_checkpoint(), "pre-trained checkpoint", "pretrain");
    m = model::load_mat(L.pretrain_checkpoint());
  } else {
    require(a.tuned / "model.ckpt", "tuned checkpoint", "tune");
    m = model::load_mat(a.tuned / "model.ckpt");
    if (fs::exists(a.tuned / "anchors.json")) anchors = tuning::AnchorStore::load(a.tuned / "anchors.json");
  }
  std::optional<embed::Embedder> emb;
  std::optional<Tensor<float>> reference;
  if (c.style.steps > 0) {
    require(L.tuning_embedder(), "tuning embedder", "train-embedders");
    emb = embed::load_embedder(L.tuning_embedder(), embed::Role::Tuning);
    if (!a.reference.empty()) {
      reference = data::read_image_png(a.reference);
    } else {
      const auto paths = data::corpus_paths(L.data());
      require(paths.person, "person manifest", "gen-data");
      const auto person = data::load_manifest(paths.person);
      const auto recs = person.select(data::Split::Train, data::person_identity(person));
      const auto loaded = data::load_records(paths.person, {recs[a.seed % recs.size()]});
      reference = loaded.front().image;
    }
  }
  inference::InpaintRequest q;
  q.image = &image;
  q.mask = &mask;
  q.model = &m;
  q.reference = reference ? &*reference : nullptr;
  q.embedder = emb ? &*emb : nullptr;
  q.anchors = anchors ? &*anchors : nullptr;
  q.style = c.style;
  q.blend = c.blend;
  q.seed = a.seed;
  const auto r = inference::inpaint(q);
  data::write_image_png(a.output / "raw.png", r.raw);
  data::write_image_png(a.output / "composited.png", r.composited);
  data::write_image_png(a.output / "blended.png", r.blended);
  auto rec = inference::result_record(r);
  rec["s_u"] = r.s_u;
  rec["blend"] = c.blend;
  write_text(a.output / "result.json", rec.dump(2) + "\n");
  archive_config(a.output, c);
  if (r.non_finite) say(log, "warning: style optimization hit a non-finite loss; kept the best iterate");
  say(log, "wrote " + a.output.string());
}

void blend(const RunConfig& c, const BlendArgs& a, const LogFn& log) {
  c.validate();
  inference::BlendProblem p{data::read_image_png(a.target), data::read_image_png(a.source), data::read_mask_png(a.mask)};
  const auto r = inference::poisson_blend(p);
  data::write_image_png(a.output, r.image);
  auto rec_path = a.output;
  rec_path.replace_extension(".json");
  write_text(rec_path, json{{"solver_iterations", r.iterations}, {"solver_residual", r.residual}}.dump(2) + "\n");
  say(log, "wrote " + a.output.string() + " (" + std::to_string(r.iterations) + " CG iterations)");
}

eval::EvalReport evaluate(const RunConfig& c, const LogFn& log) {
  auto d = evaluate_run(c, log);
  const auto dir = layout(c).eval_dir();
  eval::save_report(dir, d.report);
  archive_config(dir, c);
  say(log, "wrote " + (dir / "report.json").string());
  return d.report;
}

}  // namespace anchortune::pipeline
