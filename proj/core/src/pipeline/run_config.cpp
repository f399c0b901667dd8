#include "anchortune/pipeline/run_config.hpp"

#include <cstdlib>
#include <fstream>
#include <sstream>

#include "anchortune/config_json.hpp"
#include "anchortune/error.hpp"

namespace anchortune::pipeline {

using nlohmann::json;

void RunConfig::validate() const {
  corpus.validate();
  model.validate();
  pretrain.validate();
  tuning_embedder.validate();
  evaluation_embedder.validate();
  tuning.validate();
  style.validate();
  if (model.image_size != corpus.image_size)
    throw ConfigError("model.image_size (" + std::to_string(model.image_size) + ") differs from corpus.image_size (" +
                      std::to_string(corpus.image_size) + ")");
  if (tuning_embedder.image_size != corpus.image_size || evaluation_embedder.image_size != corpus.image_size)
    throw ConfigError("embedder image_size must equal corpus.image_size");
  if (tuning_embedder.role != embed::Role::Tuning) throw ConfigError("tuning_embedder.role must be tuning");
  if (evaluation_embedder.role != embed::Role::Evaluation) throw ConfigError("evaluation_embedder.role must be evaluation");
  if (evaluation.seeds.empty()) throw ConfigError("evaluation.seeds must not be empty");
  if (evaluation.eye_margin < 0) throw ConfigError("evaluation.eye_margin must be non-negative");
}

void to_json(json& j, const RunConfig& c) {
  j = {{"output", c.output},
       {"corpus", c.corpus},
       {"model", c.model},
       {"pretrain", c.pretrain},
       {"tuning_embedder", c.tuning_embedder},
       {"evaluation_embedder", c.evaluation_embedder},
       {"tuning", c.tuning},
       {"style", c.style},
       {"blend", c.blend},
       {"evaluation", {{"seeds", c.evaluation.seeds}, {"eye_margin", c.evaluation.eye_margin}}}};
}

void from_json(const json& j, RunConfig& c) {
  constexpr std::string_view w = "config";
  cfg::reject_unknown(j,
                      {"output", "corpus", "model", "pretrain", "tuning_embedder", "evaluation_embedder", "tuning",
                       "style", "blend", "evaluation"},
                      w);
  cfg::read(j, "output", c.output, w);
  if (j.contains("corpus")) from_json(j["corpus"], c.corpus);
  if (j.contains("model")) from_json(j["model"], c.model);
  if (j.contains("pretrain")) from_json(j["pretrain"], c.pretrain);
  if (j.contains("tuning_embedder")) from_json(j["tuning_embedder"], c.tuning_embedder);
  if (j.contains("evaluation_embedder")) from_json(j["evaluation_embedder"], c.evaluation_embedder);
  if (j.contains("tuning")) from_json(j["tuning"], c.tuning);
  if (j.contains("style")) from_json(j["style"], c.style);
  cfg::read(j, "blend", c.blend, w);
  if (j.contains("evaluation")) {
    const auto& e = j["evaluation"];
    cfg::reject_unknown(e, {"seeds", "eye_margin"}, "evaluation");
    cfg::read(e, "seeds", c.evaluation.seeds, "evaluation");
    cfg::read(e, "eye_margin", c.evaluation.eye_margin, "evaluation");
  }
}

std::string run_config_json(const RunConfig& c) { return json(c).dump(2) + "\n"; }

RunConfig load_run_config(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open config " + path.string());
  std::stringstream ss;
  ss << in.rdbuf();
  json j;
  try {
    j = json::parse(ss.str());
  } catch (const json::exception& e) {
    throw ConfigError(path.string() + ": " + e.what());
  }
  RunConfig c;
  from_json(j, c);
  c.validate();
  return c;
}

void set_field(RunConfig& c, std::string_view dotted_key, std::string_view value) {
  json j = c;
  json* node = &j;
  std::string key(dotted_key);
  std::size_t start = 0;
  while (true) {
    const auto dot = key.find('.', start);
    const std::string part = key.substr(start, dot == std::string::npos ? std::string::npos : dot - start);
    if (!node->is_object() || !node->contains(part)) throw ConfigError("unknown config field '" + key + "'");
    node = &(*node)[part];
    if (dot == std::string::npos) break;
    start = dot + 1;
  }
  json parsed;
  try {
    parsed = json::parse(value);
  } catch (const json::exception&) {
    parsed = std::string(value);
  }
  if (node->is_string() && !parsed.is_string()) parsed = std::string(value);
  if (node->is_object()) throw ConfigError("config field '" + key + "' is a section; set one of its fields");
  *node = parsed;
  RunConfig updated;
  try {
    from_json(j, updated);
  } catch (const ConfigError& e) {
    throw ConfigError("--set " + key + "=" + std::string(value) + ": " + e.what());
  }
  c = std::move(updated);
}

std::filesystem::path run_directory(const RunConfig& c) {
  const std::filesystem::path out = c.output.empty() ? std::filesystem::path("default") : std::filesystem::path(c.output);
  if (out.is_absolute()) return out;
  const char* root = std::getenv(kOutputRootEnv);
  return std::filesystem::path(root && *root ? root : "runs") / out;
}

}  // namespace anchortune::pipeline
