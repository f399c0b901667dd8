#pragma once

#include <cstdint>
#include <filesystem>
#include <string>

#include <json.hpp>

#include "anchortune/model/mat_lite.hpp"
#include "anchortune/numerics/param_set.hpp"

namespace anchortune::model {

// Binary container:
//   "ATCK" | u32 version | u32 meta length | meta JSON (holds "kind")
//   | u32 entry count | entries { u32 name length | name | u32 rank | u32 dims[rank] | f32 values }
// All integers and floats little-endian.
inline constexpr std::uint32_t kCheckpointVersion = 1;

struct Checkpoint {
  std::string kind;
  nlohmann::json meta;  // always contains "kind"
  ParamSet<float> params;
};

std::string encode_checkpoint(const std::string& kind, nlohmann::json meta, const ParamSet<float>& params);
Checkpoint decode_checkpoint(const std::string& bytes, const std::string& source = "checkpoint");

void save_checkpoint(const std::filesystem::path& path, const std::string& kind, nlohmann::json meta,
                     const ParamSet<float>& params);
Checkpoint load_checkpoint(const std::filesystem::path& path, const std::string& expected_kind);

// Copies values into `target`; rejects unknown names, missing names and shape mismatches.
void assign_params(const ParamSet<float>& loaded, ParamSet<float>& target, const std::string& source);

struct MatModel {
  MatConfig config;
  ParamSet<float> params;

  static MatModel create(const MatConfig& cfg) { return {cfg, init_mat_params(cfg)}; }
};

void save_mat(const std::filesystem::path& path, const MatModel& m, nlohmann::json extra = nlohmann::json::object());
MatModel load_mat(const std::filesystem::path& path);

}  // namespace anchortune::model
