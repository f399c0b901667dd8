#pragma once

#include <cstdint>
#include <functional>
#include <vector>

#include <json.hpp>

#include "anchortune/model/checkpoint.hpp"
#include "anchortune/model/feature_extractor.hpp"

namespace anchortune::model {

struct PretrainConfig {
  int steps = 2500;
  int batch = 8;
  double learning_rate = 2e-3;
  double min_hole = 0.1;
  double max_hole = 0.5;
  std::uint64_t seed = 0;

  void validate() const;
};

void to_json(nlohmann::json& j, const PretrainConfig& c);
void from_json(const nlohmann::json& j, PretrainConfig& c);

// Random inpainting problem: mask (random kind and hole fraction), z, and feature mask.
struct TrainingDraw {
  Tensor<float> masks;  // [N,1,S,S]
  Tensor<float> z;      // [N,d]
  Tensor<float> B;      // [N,1,h,w]
};
TrainingDraw draw_training_problem(const MatConfig& cfg, int n, double min_hole, double max_hole, std::uint64_t seed);

// Mean reconstruction loss of x̂ against x over a batch; z drawn inside the draw.
Var<float> batch_loss(const MatConfig& cfg, const Bound<float>& p, const FeatureExtractor& fe, Tape<float>& tape,
                      const Tensor<float>& x, const TrainingDraw& draw);

struct PretrainResult {
  MatModel model;
  std::vector<double> losses;  // per step, training batch
};

using ProgressFn = std::function<void(int step, double loss)>;

PretrainResult pretrain(MatModel init, const std::vector<Tensor<float>>& images, const FeatureExtractor& fe,
                        const PretrainConfig& cfg, const ProgressFn& progress = {});

// Mean reconstruction loss over images with masks/z/B fixed by seed.
double heldout_loss(const MatModel& m, const std::vector<Tensor<float>>& images, const FeatureExtractor& fe,
                    std::uint64_t seed, int batch = 16);

}  // namespace anchortune::model
