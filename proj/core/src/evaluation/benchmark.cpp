#include "anchortune/evaluation/benchmark.hpp"

#include <cmath>
#include <cstdio>
#include <fstream>
#include <sstream>

#include <json.hpp>

#include "anchortune/dataset/render.hpp"
#include "anchortune/error.hpp"
#include "anchortune/evaluation/frechet.hpp"
#include "anchortune/evaluation/identity_score.hpp"
#include "anchortune/numerics/random.hpp"

namespace anchortune::eval {

using nlohmann::json;

namespace {

double round6(double v) { return std::round(v * 1e6) / 1e6; }

json row_json(const ReportRow& r) {
  return {{"label", r.label}, {"frechet", round6(r.frechet)}, {"identity", round6(r.identity)}};
}

}  // namespace

std::string digest(std::string_view text) {
  std::uint64_t h = 1469598103934665603ull;
  for (unsigned char c : text) {
    h ^= c;
    h *= 1099511628211ull;
  }
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(h));
  return buf;
}

std::string report_json(const EvalReport& r) {
  json rows = json::array();
  for (const auto& row : r.rows) rows.push_back(row_json(row));
  json metrics = json::object();
  for (const auto& [k, v] : r.metrics) metrics[k] = round6(v);
  json j = {{"version", 1},          {"config_digest", r.config_digest},
            {"seeds", r.seeds},      {"ground_truth", row_json(r.ground_truth)},
            {"rows", rows},          {"metrics", metrics}};
  return j.dump(2) + "\n";
}

EvalReport report_from_json(std::string_view text) {
  EvalReport r;
  try {
    const auto j = json::parse(text);
    for (auto it = j.begin(); it != j.end(); ++it)
      if (it.key() != "version" && it.key() != "config_digest" && it.key() != "seeds" && it.key() != "ground_truth" &&
          it.key() != "rows" && it.key() != "metrics")
        throw FormatError("report: unknown field '" + it.key() + "'");
    if (j.at("version") != 1) throw FormatError("report: unsupported version");
    auto row = [](const json& e) {
      return ReportRow{e.at("label").get<std::string>(), e.at("frechet").get<double>(), e.at("identity").get<double>()};
    };
    r.config_digest = j.at("config_digest").get<std::string>();
    r.seeds = j.at("seeds").get<std::vector<std::uint64_t>>();
    r.ground_truth = row(j.at("ground_truth"));
    for (const auto& e : j.at("rows")) r.rows.push_back(row(e));
    r.metrics = j.at("metrics").get<std::map<std::string, double>>();
  } catch (const json::exception& e) {
    throw FormatError(std::string("report: ") + e.what());
  }
  return r;
}

std::string report_text(const EvalReport& r) {
  std::size_t width = r.ground_truth.label.size();
  for (const auto& row : r.rows) width = std::max(width, row.label.size());
  for (const auto& [k, _] : r.metrics) width = std::max(width, k.size());
  std::ostringstream os;
  char buf[256];
  std::snprintf(buf, sizeof buf, "%-*s  %10s  %10s\n", static_cast<int>(width), "model", "FID-like", "identity");
  os << buf;
  auto line = [&](const ReportRow& row) {
    std::snprintf(buf, sizeof buf, "%-*s  %10.4f  %10.4f\n", static_cast<int>(width), row.label.c_str(), row.frechet,
                  row.identity);
    os << buf;
  };
  line(r.ground_truth);
  for (const auto& row : r.rows) line(row);
  if (!r.metrics.empty()) {
    os << '\n';
    for (const auto& [k, v] : r.metrics) {
      std::snprintf(buf, sizeof buf, "%-*s  %10.6f\n", static_cast<int>(width), k.c_str(), v);
      os << buf;
    }
  }
  os << "\nseeds:";
  for (auto s : r.seeds) os << ' ' << s;
  os << "\nconfig digest: " << r.config_digest << '\n';
  return os.str();
}

void save_report(const std::filesystem::path& dir, const EvalReport& r) {
  std::filesystem::create_directories(dir);
  for (const auto& [name, text] : {std::pair{"report.json", report_json(r)}, std::pair{"report.txt", report_text(r)}}) {
    std::ofstream out(dir / name, std::ios::binary);
    if (!out) throw IoError("cannot write " + (dir / name).string());
    out << text;
  }
}

std::vector<Tensor<float>> inpaint_test_set(const BenchmarkModel& m, const BenchmarkInputs& in) {
  if (!m.model) throw DomainError("benchmark: model '" + m.label + "' missing");
  if (in.test_images.size() != in.test_masks.size()) throw ShapeError("benchmark: test image and mask counts differ");
  const int S = m.model->config.image_size;
  std::vector<Tensor<float>> out;
  for (std::size_t i = 0; i < in.test_images.size(); ++i) {
    if (in.test_images[i].shape() != Shape{3, S, S})
      throw ShapeError("benchmark: test image " + shape_str(in.test_images[i].shape()) + " vs model resolution " +
                       std::to_string(S));
    inference::InpaintRequest q;
    q.image = &in.test_images[i];
    q.mask = &in.test_masks[i];
    q.model = m.model;
    q.anchors = m.anchors;
    q.blend = in.blend;
    auto rng = make_rng(in.seed, {0xbe, i});
    q.seed = rng();
    q.style = in.style;
    if (m.style_optimization && in.style.steps > 0) {
      if (in.references.empty() || !in.tuning_embedder)
        throw DomainError("benchmark: style optimization needs references and the tuning embedder");
      q.reference = &in.references[rng() % in.references.size()];
      q.embedder = in.tuning_embedder;
    } else {
      q.style.steps = 0;
    }
    out.push_back(inference::inpaint(q).blended);
  }
  return out;
}

ReportRow score_outputs(const std::string& label, const std::vector<Tensor<float>>& outputs, const BenchmarkInputs& in) {
  if (!in.evaluation_embedder) throw DomainError("benchmark: evaluation embedder missing");
  const auto& e = *in.evaluation_embedder;
  return {label, frechet_distance(frechet_features(e, outputs), frechet_features(e, in.test_images)),
          identity_score(e, outputs, in.ground_truth)};
}

EvalReport run_benchmark(const std::vector<BenchmarkModel>& models, const BenchmarkInputs& in) {
  EvalReport r;
  r.seeds = {in.seed};
  r.ground_truth = score_outputs("ground truth (train + test)", in.test_images, in);
  for (const auto& m : models) r.rows.push_back(score_outputs(m.label, inpaint_test_set(m, in), in));
  return r;
}

Tensor<float> eye_region(const data::ImageRecord& r, int size) {
  return data::eye_region_mask(data::generate_identity(r.identity_seed), r.nuisance, size);
}

Tensor<float> eye_hole_mask(const data::ImageRecord& r, int size, int margin) {
  const auto region = eye_region(r, size);
  int y0 = size, y1 = -1, x0 = size, x1 = -1;
  for (int y = 0; y < size; ++y)
    for (int x = 0; x < size; ++x)
      if (region[static_cast<std::size_t>(y * size + x)] > 0) {
        y0 = std::min(y0, y);
        y1 = std::max(y1, y);
        x0 = std::min(x0, x);
        x1 = std::max(x1, x);
      }
  if (y1 < 0) throw DomainError("eye_hole_mask: empty eye region for " + r.path);
  Tensor<float> mask({1, size, size}, 1.0f);
  for (int y = std::max(0, y0 - margin); y <= std::min(size - 1, y1 + margin); ++y)
    for (int x = std::max(0, x0 - margin); x <= std::min(size - 1, x1 + margin); ++x)
      mask[static_cast<std::size_t>(y * size + x)] = 0.0f;
  return mask;
}

double leak_score(const std::vector<Tensor<float>>& outputs, const std::vector<Tensor<float>>& ground_truth,
                  const std::vector<Tensor<float>>& regions) {
  if (outputs.empty() || outputs.size() != ground_truth.size() || outputs.size() != regions.size())
    throw ShapeError("leak_score: outputs, ground truth and regions must be equally many and non-empty");
  double total = 0;
  for (std::size_t i = 0; i < outputs.size(); ++i)
    total += data::eye_luminance_deficit(outputs[i], ground_truth[i], regions[i]);
  return total / static_cast<double>(outputs.size());
}

double frechet_gap(const embed::Embedder& evaluation, const std::vector<Tensor<float>>& a,
                   const std::vector<Tensor<float>>& b) {
  return frechet_distance(frechet_features(evaluation, a), frechet_features(evaluation, b));
}

}  // namespace anchortune::eval
