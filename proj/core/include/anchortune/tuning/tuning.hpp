#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include <json.hpp>

#include "anchortune/model/checkpoint.hpp"
#include "anchortune/model/feature_extractor.hpp"
#include "anchortune/tuning/anchors.hpp"

namespace anchortune::tuning {

enum class Variant { S, C, NoAnchor };
enum class AnchorInit { Random, Optimized };

std::string_view to_string(Variant v);
std::optional<Variant> variant_from_string(std::string_view s);  // "S", "C", "no-anchor"
std::string_view to_string(AnchorInit a);
std::optional<AnchorInit> anchor_init_from_string(std::string_view s);

struct TuningConfig {
  Variant variant = Variant::C;
  int steps = 1000;  // optimizer steps; the pair schedule repeats as needed
  double learning_rate = 2e-4;
  double lambda_reg = 1.0;
  int reg_batch = 4;  // reg pairs per step
  AnchorInit anchor_init = AnchorInit::Random;
  int anchor_init_steps = 200;
  double anchor_init_lr = 0.5;
  bool clustering = true;
  bool grouping = true;
  double sigma = 1.0;
  double min_hole = 0.2;
  double max_hole = 0.5;
  std::uint64_t seed = 0;

  void validate() const;
};

void to_json(nlohmann::json& j, const TuningConfig& c);
void from_json(const nlohmann::json& j, TuningConfig& c);

// One image-anchor pairing; an empty anchor means a fresh random s_u per visit.
struct Pair {
  int image = 0;
  std::string anchor;
  friend bool operator==(const Pair&, const Pair&) = default;
};

// Pairs of one epoch, group by group in member order.
//   S:         x_i with ref:i
//   C:         x_i with ref:i and ref:j~i for j != i in its group (clustering),
//              or with every ref:j of its group (no clustering)
//   NoAnchor:  x_i once, fresh s_u
std::vector<Pair> enumerate_pairs(const std::vector<ReferenceGroup>& groups, Variant variant, bool clustering = true);

// Base anchors for every reference (random or optimized) and, for variant C
// with clustering, the perturbed cluster anchors.
AnchorStore prepare_anchors(const model::MatModel& base, const model::FeatureExtractor& fe,
                            const std::vector<Tensor<float>>& refs, const std::vector<ReferenceGroup>& groups,
                            const TuningConfig& cfg);

struct RegItem {
  Tensor<float> image;  // [1,3,S,S]
  Tensor<float> mask;   // b', [1,1,S,S]
  Tensor<float> B;      // [1,1,h,w]
  std::string anchor;   // reg:<t>
  Tensor<float> base_output;  // frozen base inpainting, [1,3,S,S]
};

struct RegularizationSet {
  model::MatModel base;  // frozen copy
  std::vector<RegItem> items;
};

// Fixes one unique anchor, mask and feature mask per image and caches the
// base model's output. Reg anchors are added to `store`.
RegularizationSet make_regularization_set(const model::MatModel& base, const std::vector<Tensor<float>>& images,
                                          const std::vector<Tensor<float>>& masks, AnchorStore& store,
                                          std::uint64_t seed);

// Reconstruction loss between the current model's inpainting and the frozen base
// inpainting of the same (x, b', s_u, B); only `current` receives gradient.
template <typename T>
Var<T> regularization_loss(const model::MatConfig& cfg, const Bound<T>& current, const ParamSet<T>& base,
                           const model::FeatureExtractor& fe, const Tensor<T>& x, const Tensor<T>& s_u,
                           const Tensor<T>& mask, const Tensor<T>& B);

struct TuneLogEntry {
  int step = 0;
  int epoch = 0;
  int image = 0;
  std::string anchor;
  double ref_loss = 0;
  double reg_loss = 0;  // sum over the step's reg batch
  double total_loss = 0;
  double learning_rate = 0;
};

nlohmann::json to_json(const TuneLogEntry& e);
void write_tune_log(const std::filesystem::path& path, const std::vector<TuneLogEntry>& log);
std::vector<TuneLogEntry> read_tune_log(const std::filesystem::path& path);

struct TuneResult {
  model::MatModel model;
  std::vector<TuneLogEntry> log;
  int pairs_per_epoch = 0;
};

using TuneProgressFn = std::function<void(const TuneLogEntry&)>;

// A flat, seed-shuffled schedule: each step one reference pair
// with a fresh mask plus a reg batch, loss = L_ref + lambda_reg * sum L_reg.
TuneResult tune(const model::MatModel& init, const model::FeatureExtractor& fe, const std::vector<Tensor<float>>& refs,
                const std::vector<ReferenceGroup>& groups, const AnchorStore& anchors, const RegularizationSet& reg,
                const TuningConfig& cfg, const TuneProgressFn& progress = {});

}  // namespace anchortune::tuning
