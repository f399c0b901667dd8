#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <optional>
#include <string>

#include "anchortune/evaluation/benchmark.hpp"
#include "anchortune/pipeline/run_config.hpp"

namespace anchortune::pipeline {

namespace fs = std::filesystem;

// Where every command reads and writes inside a run directory.
struct RunLayout {
  fs::path root;

  fs::path data() const { return root / "data"; }
  fs::path pretrain_dir() const { return root / "pretrain"; }
  fs::path pretrain_checkpoint() const { return pretrain_dir() / "mat.ckpt"; }
  fs::path embedder_dir() const { return root / "embedders"; }
  fs::path tuning_embedder() const { return embedder_dir() / "tuning.ckpt"; }
  fs::path evaluation_embedder() const { return embedder_dir() / "evaluation.ckpt"; }
  fs::path tune_root() const { return root / "tune"; }
  fs::path tune_dir(const std::string& label, std::uint64_t seed) const {
    return tune_root() / label / ("seed-" + std::to_string(seed));
  }
  fs::path eval_dir() const { return root / "eval"; }
};

RunLayout layout(const RunConfig& c);

// "S", "C", "no-anchor", plus "-single" (grouping off), "-flat" (clustering
// off), "-noreg" (lambda_reg = 0), "-optinit" (optimized anchors).
std::string tune_label(const tuning::TuningConfig& t);

using LogFn = std::function<void(const std::string&)>;

// Writes config.json (effective config) and VERSION into `dir`.
void archive_config(const fs::path& dir, const RunConfig& c);

void gen_data(const RunConfig& c, const LogFn& log = {});
void pretrain(const RunConfig& c, const LogFn& log = {});
void train_embedders(const RunConfig& c, const LogFn& log = {});

// Tunes with c.tuning (its seed included) and returns the output directory.
fs::path tune(const RunConfig& c, const LogFn& log = {});

struct InpaintArgs {
  fs::path image;
  fs::path mask;
  fs::path tuned;      // tune output directory; empty = base model
  fs::path reference;  // x_p; empty = a reference drawn from the corpus
  fs::path output;     // directory for raw/composited/blended PNGs and result.json
  std::uint64_t seed = 0;
};
void inpaint(const RunConfig& c, const InpaintArgs& a, const LogFn& log = {});

struct BlendArgs {
  fs::path target;  // composited image
  fs::path source;  // raw network output
  fs::path mask;
  fs::path output;  // PNG path; a result record is written next to it
};
void blend(const RunConfig& c, const BlendArgs& a, const LogFn& log = {});

// Scores every tuned model under the run directory; writes eval/report.{json,txt}.
eval::EvalReport evaluate(const RunConfig& c, const LogFn& log = {});

}  // namespace anchortune::pipeline
