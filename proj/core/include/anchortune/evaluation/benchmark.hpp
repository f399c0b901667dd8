#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <string>
#include <vector>

#include "anchortune/dataset/corpus.hpp"
#include "anchortune/embedder/embedder.hpp"
#include "anchortune/inference/inpaint.hpp"
#include "anchortune/model/checkpoint.hpp"
#include "anchortune/tuning/anchors.hpp"

namespace anchortune::eval {

struct ReportRow {
  std::string label;
  double frechet = 0;
  double identity = 0;
  friend bool operator==(const ReportRow&, const ReportRow&) = default;
};

struct EvalReport {
  std::vector<ReportRow> rows;
  ReportRow ground_truth{"ground truth (train + test)", 0, 0};
  std::vector<std::uint64_t> seeds;
  std::string config_digest;
  std::map<std::string, double> metrics;  // ablation scalars, e.g. leak scores
};

// JSON and aligned text renderings; floats rounded to 6 decimals.
std::string report_json(const EvalReport& r);
std::string report_text(const EvalReport& r);
EvalReport report_from_json(std::string_view text);
void save_report(const std::filesystem::path& dir, const EvalReport& r);  // report.json + report.txt

// FNV-1a of a string as 16 hex digits.
std::string digest(std::string_view text);

struct BenchmarkModel {
  std::string label;
  const model::MatModel* model = nullptr;
  const tuning::AnchorStore* anchors = nullptr;  // nearest-anchor starts when given
  bool style_optimization = true;
};

struct BenchmarkInputs {
  std::vector<Tensor<float>> test_images;   // [3,S,S]
  std::vector<Tensor<float>> test_masks;    // [1,S,S]
  std::vector<Tensor<float>> ground_truth;  // target train + test
  std::vector<Tensor<float>> references;    // x_p candidates
  const embed::Embedder* tuning_embedder = nullptr;
  const embed::Embedder* evaluation_embedder = nullptr;
  inference::StyleOptConfig style;
  bool blend = true;
  std::uint64_t seed = 0;
};

// Final (blended) outputs of one model over the test set.
std::vector<Tensor<float>> inpaint_test_set(const BenchmarkModel& m, const BenchmarkInputs& in);

// Rows per model: Fréchet distance of evaluation-embedder features against the
// test ground truth, and identity score against all ground truth.
EvalReport run_benchmark(const std::vector<BenchmarkModel>& models, const BenchmarkInputs& in);
ReportRow score_outputs(const std::string& label, const std::vector<Tensor<float>>& outputs, const BenchmarkInputs& in);

// Hole covering the eye region of a record's render, grown by `margin` pixels, [1,S,S].
Tensor<float> eye_hole_mask(const data::ImageRecord& r, int size, int margin = 2);
Tensor<float> eye_region(const data::ImageRecord& r, int size);

// Mean eye-region luminance deficit of outputs against their ground truth.
double leak_score(const std::vector<Tensor<float>>& outputs, const std::vector<Tensor<float>>& ground_truth,
                  const std::vector<Tensor<float>>& regions);

// Fréchet distance between evaluation-embedder features of two output sets.
double frechet_gap(const embed::Embedder& evaluation, const std::vector<Tensor<float>>& a,
                   const std::vector<Tensor<float>>& b);

}  // namespace anchortune::eval
