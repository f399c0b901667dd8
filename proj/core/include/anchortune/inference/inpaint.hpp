#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "anchortune/embedder/embedder.hpp"
#include "anchortune/inference/poisson.hpp"
#include "anchortune/model/checkpoint.hpp"
#include "anchortune/tuning/anchors.hpp"

namespace anchortune::inference {

struct StyleOptConfig {
  int steps = 50;
  double learning_rate = 3.0;
  bool start_from_anchor = true;  // nearest tuned anchor to a fresh draw; else the fresh draw itself
  int restarts = 1;               // independent starts, best kept

  void validate() const;
};

void to_json(nlohmann::json& j, const StyleOptConfig& c);
void from_json(const nlohmann::json& j, StyleOptConfig& c);

struct StyleOptResult {
  std::vector<float> s_u;      // best iterate
  std::vector<double> losses;  // loss at every evaluated iterate, starting point first
  double best_loss = 0;
  bool non_finite = false;     // stopped early on a non-finite loss
};

// Identity loss 1 - cos(phi(composite), phi(x_p)) for a [3,S,S] image, mask and style.
double identity_loss(const model::MatModel& m, const embed::Embedder& tuning, const Tensor<float>& x,
                     const Tensor<float>& mask, const Tensor<float>& x_p, const std::vector<float>& s_u,
                     const Tensor<float>& B);

// Gradient descent on s_u alone; model and embedder stay frozen.
StyleOptResult optimize_style_for_identity(const model::MatModel& m, const Tensor<float>& x, const Tensor<float>& mask,
                                           const Tensor<float>& x_p, const embed::Embedder& tuning,
                                           std::vector<float> initial, const Tensor<float>& B, int steps,
                                           double learning_rate);

// map_noise of a fresh draw, replaced by the nearest (cosine) reference anchor
// when a store is given. Regularization anchors are never candidates.
std::vector<float> initial_style(const model::MatModel& m, const tuning::AnchorStore* anchors, std::uint64_t seed);

struct InpaintRequest {
  const Tensor<float>* image = nullptr;  // [3,S,S]
  const Tensor<float>* mask = nullptr;   // [1,S,S], 1 = known
  const model::MatModel* model = nullptr;
  const Tensor<float>* reference = nullptr;  // x_p; required when steps > 0
  const embed::Embedder* embedder = nullptr;  // tuning role; required when steps > 0
  const tuning::AnchorStore* anchors = nullptr;
  const std::vector<float>* initial_style = nullptr;  // overrides the anchor/fresh start
  StyleOptConfig style;
  bool blend = true;
  std::uint64_t seed = 0;
};

struct InpaintResult {
  Tensor<float> raw;         // network output
  Tensor<float> composited;  // x*b + raw*(1-b)
  Tensor<float> blended;     // Poisson-blended composite (= composited when blending is off)
  std::vector<float> s_u;
  std::vector<double> identity_losses;  // best run's trajectory; empty without an embedder
  double identity_loss = 0;             // final, NaN without an embedder
  bool non_finite = false;
  int solver_iterations = 0;
  double solver_residual = 0;
};

InpaintResult inpaint(const InpaintRequest& req);

nlohmann::json result_record(const InpaintResult& r);

}  // namespace anchortune::inference
