#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <string_view>
#include <vector>

#include <json.hpp>

#include "anchortune/dataset/corpus.hpp"
#include "anchortune/embedder/embedder.hpp"
#include "anchortune/inference/inpaint.hpp"
#include "anchortune/model/mat_lite.hpp"
#include "anchortune/model/pretrain.hpp"
#include "anchortune/tuning/tuning.hpp"

namespace anchortune::pipeline {

inline constexpr std::string_view kToolVersion = "0.1.0";
// Default parent directory for run outputs when a config names no output.
inline constexpr const char* kOutputRootEnv = "ANCHORTUNE_OUTPUT_ROOT";

struct EvalConfig {
  std::vector<std::uint64_t> seeds{1, 2, 3};
  int eye_margin = 2;  // pixels added around the eye region for leak masks
  friend bool operator==(const EvalConfig&, const EvalConfig&) = default;
};

struct RunConfig {
  std::string output;  // run directory; relative paths resolve against the output root
  data::CorpusConfig corpus;
  model::MatConfig model;
  model::PretrainConfig pretrain;
  embed::EmbedderConfig tuning_embedder = embed::default_embedder_config(embed::Role::Tuning);
  embed::EmbedderConfig evaluation_embedder = embed::default_embedder_config(embed::Role::Evaluation);
  tuning::TuningConfig tuning;
  inference::StyleOptConfig style;
  bool blend = true;
  EvalConfig evaluation;

  void validate() const;
};

void to_json(nlohmann::json& j, const RunConfig& c);
void from_json(const nlohmann::json& j, RunConfig& c);

RunConfig load_run_config(const std::filesystem::path& path);
std::string run_config_json(const RunConfig& c);

// Sets one field by dotted path ("tuning.lambda_reg"); the value is parsed as
// JSON when possible, else taken as a string. Field-level ConfigError on failure.
void set_field(RunConfig& c, std::string_view dotted_key, std::string_view value);

// Run directory: `output` if absolute, else under $ANCHORTUNE_OUTPUT_ROOT (or "runs").
std::filesystem::path run_directory(const RunConfig& c);

}  // namespace anchortune::pipeline
