#pragma once

#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include "anchortune/evaluation/benchmark.hpp"
#include "anchortune/pipeline/commands.hpp"

namespace anchortune::pipeline {

// Per-seed measurements of one tuned configuration (or the base model).
struct ModelScores {
  std::string label;
  std::uint64_t seed = 0;
  eval::ReportRow row;              // Fréchet vs test GT, identity vs all GT
  double frechet_gap = 0;           // off-identity outputs vs base outputs
  std::vector<double> leak;         // per no-accessory test image
};

struct EvaluationData {
  std::vector<ModelScores> scores;  // base rows carry label "MAT" / "MAT+opt"
  eval::EvalReport report;
};

// Shared measurement protocol behind `eval` and the experiment suite.
EvaluationData evaluate_run(const RunConfig& c, const LogFn& log = {});

// Mean over seeds of a label's identity, gap and leak; NaN when absent.
double mean_identity(const EvaluationData& d, const std::string& label);
double mean_gap(const EvaluationData& d, const std::string& label);
double mean_leak(const EvaluationData& d, const std::string& label);
// Standard error of the mean paired per-image leak difference a - b, pooled over seeds.
double leak_difference_se(const EvaluationData& d, const std::string& a, const std::string& b);

// Tuning variants of the ablation suite: S, C, C-noreg, C-single, no-anchor.
std::vector<tuning::TuningConfig> suite_variants(const tuning::TuningConfig& base);

// Produces missing upstream artifacts, tunes every suite variant for every
// evaluation seed (skipping existing outputs), then evaluates.
EvaluationData run_suite(const RunConfig& c, const LogFn& log = {});

}  // namespace anchortune::pipeline
