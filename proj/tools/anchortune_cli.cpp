// anchortune: command-line front end over the pipeline.
//
// Config precedence (later wins): built-in defaults, --config file, --set
// overrides in order, then the dedicated flags of each command.

#include <algorithm>
#include <cctype>
#include <iostream>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "anchortune/error.hpp"
#include "anchortune/pipeline/commands.hpp"
#include "anchortune/pipeline/experiments.hpp"

namespace at = anchortune;
namespace pl = anchortune::pipeline;

namespace {

int exit_code(const std::string& category) {
  if (category == "config") return 2;
  if (category == "missing-artifact") return 3;
  if (category == "io") return 4;
  if (category == "format") return 5;
  if (category == "numeric") return 7;
  return 6;  // shape, domain
}

std::string lower(std::string s) {
  std::transform(s.begin(), s.end(), s.begin(), [](unsigned char c) { return std::tolower(c); });
  return s;
}

struct Common {
  std::string config;
  std::string output;
  std::vector<std::string> sets;
};

struct TuneFlags {
  std::string variant;
  bool no_reg = false;
  bool no_grouping = false;
  bool no_clustering = false;
  std::string anchor_init;
  std::optional<std::uint64_t> seed;
  std::optional<int> steps;
};

pl::RunConfig resolve(const Common& c) {
  pl::RunConfig rc;
  if (!c.config.empty()) rc = pl::load_run_config(c.config);
  for (const auto& s : c.sets) {
    const auto eq = s.find('=');
    if (eq == std::string::npos) throw at::ConfigError("--set expects key=value, got '" + s + "'");
    pl::set_field(rc, s.substr(0, eq), s.substr(eq + 1));
  }
  if (!c.output.empty()) rc.output = c.output;
  return rc;
}

void apply(const TuneFlags& f, pl::RunConfig& rc) {
  if (!f.variant.empty()) {
    auto v = lower(f.variant);
    if (v == "s" || v == "c") v = std::string(1, static_cast<char>(std::toupper(v[0])));
    const auto parsed = at::tuning::variant_from_string(v);
    if (!parsed) throw at::ConfigError("--variant: expected s, c or no-anchor, got '" + f.variant + "'");
    rc.tuning.variant = *parsed;
  }
  if (f.no_reg) rc.tuning.lambda_reg = 0;
  if (f.no_grouping) rc.tuning.grouping = false;
  if (f.no_clustering) rc.tuning.clustering = false;
  if (!f.anchor_init.empty()) {
    const auto a = at::tuning::anchor_init_from_string(lower(f.anchor_init));
    if (!a) throw at::ConfigError("--anchor-init: expected random or optimized, got '" + f.anchor_init + "'");
    rc.tuning.anchor_init = *a;
  }
  if (f.seed) rc.tuning.seed = *f.seed;
  if (f.steps) rc.tuning.steps = *f.steps;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Person-aware tuning of a miniature inpainting network on synthetic faces"};
  app.set_version_flag("--version", std::string(pl::kToolVersion));
  app.require_subcommand(1);
  Common common;
  auto add_common = [&](CLI::App* sub) {
    sub->add_option("-c,--config", common.config, "JSON run config")->check(CLI::ExistingFile);
    sub->add_option("-o,--output", common.output,
                    std::string("run directory (relative paths resolve under $") + pl::kOutputRootEnv + " or ./runs)");
    sub->add_option("--set", common.sets, "override a config field, key=value (repeatable)");
  };
  auto log = [](const std::string& m) { std::cout << m << std::endl; };

  auto* gen = app.add_subcommand("gen-data", "render the synthetic corpus");
  auto* pre = app.add_subcommand("pretrain", "pre-train the inpainting model");
  auto* emb = app.add_subcommand("train-embedders", "train the tuning and evaluation identity embedders");
  auto* tun = app.add_subcommand("tune", "tune the pre-trained model to the target identity");
  auto* inp = app.add_subcommand("inpaint", "inpaint one image");
  auto* bl = app.add_subcommand("blend", "Poisson-blend a network output into its target");
  auto* ev = app.add_subcommand("eval", "score every tuned model in the run");
  auto* suite = app.add_subcommand("suite", "run all missing stages and the tuning ablations, then eval");
  auto* cfg = app.add_subcommand("config", "print the effective config");
  for (auto* s : {gen, pre, emb, tun, inp, bl, ev, suite, cfg}) add_common(s);

  TuneFlags tf;
  tun->add_option("--variant", tf.variant, "s, c or no-anchor");
  tun->add_flag("--no-reg", tf.no_reg, "disable regularization (lambda_reg = 0)");
  tun->add_flag("--no-grouping", tf.no_grouping, "put every reference in one group");
  tun->add_flag("--no-clustering", tf.no_clustering, "variant C without perturbed anchors");
  tun->add_option("--anchor-init", tf.anchor_init, "random or optimized");
  tun->add_option("--seed", tf.seed, "tuning seed");
  tun->add_option("--steps", tf.steps, "optimizer steps");

  pl::InpaintArgs ia;
  std::optional<int> style_steps;
  bool no_blend = false;
  inp->add_option("--image", ia.image, "input PNG")->required()->check(CLI::ExistingFile);
  inp->add_option("--mask", ia.mask, "mask PNG, white = known")->required()->check(CLI::ExistingFile);
  inp->add_option("--tuned", ia.tuned, "tune output directory (default: base model)");
  inp->add_option("--reference", ia.reference, "identity reference PNG (default: a corpus reference)");
  inp->add_option("--out", ia.output, "output directory")->required();
  inp->add_option("--seed", ia.seed, "seed for the style draw and feature mask");
  inp->add_option("--style-steps", style_steps, "style optimization steps");
  inp->add_flag("--no-blend", no_blend, "skip Poisson blending");

  pl::BlendArgs ba;
  bl->add_option("--target", ba.target, "composited PNG")->required()->check(CLI::ExistingFile);
  bl->add_option("--source", ba.source, "raw output PNG")->required()->check(CLI::ExistingFile);
  bl->add_option("--mask", ba.mask, "mask PNG, white = known")->required()->check(CLI::ExistingFile);
  bl->add_option("--out", ba.output, "output PNG")->required();

  CLI11_PARSE(app, argc, argv);

  try {
    auto rc = resolve(common);
    if (tun->parsed()) apply(tf, rc);
    if (style_steps) rc.style.steps = *style_steps;
    if (no_blend) rc.blend = false;
    rc.validate();
    if (gen->parsed()) pl::gen_data(rc, log);
    else if (pre->parsed()) pl::pretrain(rc, log);
    else if (emb->parsed()) pl::train_embedders(rc, log);
    else if (tun->parsed()) pl::tune(rc, log);
    else if (inp->parsed()) pl::inpaint(rc, ia, log);
    else if (bl->parsed()) pl::blend(rc, ba, log);
    else if (ev->parsed()) std::cout << at::eval::report_text(pl::evaluate(rc, log));
    else if (suite->parsed()) std::cout << at::eval::report_text(pl::run_suite(rc, log).report);
    else if (cfg->parsed()) std::cout << pl::run_config_json(rc);
  } catch (const at::MissingArtifactError& e) {
    std::cerr << "error [missing-artifact]: " << e.what() << " (produced by `" << e.producer() << "`)\n";
    return exit_code(e.category());
  } catch (const at::Error& e) {
    std::cerr << "error [" << e.category() << "]: " << e.what() << "\n";
    return exit_code(e.category());
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 0;
}
