#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <optional>
#include <string_view>
#include <vector>

#include <json.hpp>

#include "anchortune/numerics/param_set.hpp"

namespace anchortune::embed {

enum class Role { Tuning, Evaluation };

std::string_view to_string(Role r);
std::optional<Role> role_from_string(std::string_view s);

struct EmbedderConfig {
  Role role = Role::Tuning;
  int image_size = 32;
  std::vector<int> channels;  // one conv block per entry; the first block keeps resolution when there are 4
  int penultimate_dim = 32;
  int embedding_dim = 32;
  std::uint64_t seed = 0;

  // training
  int epochs = 30;
  int batch = 32;
  double learning_rate = 2e-3;
  double margin = 0.2;   // additive cosine margin
  double scale = 16.0;   // logit scale
  double min_separation = 0.3;

  void validate() const;
  friend bool operator==(const EmbedderConfig&, const EmbedderConfig&) = default;
};

// Role defaults: the evaluation network is one block deeper and seeded differently.
EmbedderConfig default_embedder_config(Role role);

void to_json(nlohmann::json& j, const EmbedderConfig& c);
void from_json(const nlohmann::json& j, EmbedderConfig& c);

struct Embedder {
  EmbedderConfig config;
  ParamSet<float> params;  // backbone only
};

Embedder create_embedder(const EmbedderConfig& cfg);

template <typename T>
struct EmbedOutput {
  Var<T> penultimate;  // [N, penultimate_dim], the Fréchet feature layer
  Var<T> embedding;    // [N, embedding_dim], unit rows
};

// x [N,3,S,S] in [-1,1]. Parameters are frozen views unless `p` binds them trainable.
template <typename T>
EmbedOutput<T> embed_graph(const EmbedderConfig& cfg, const Bound<T>& p, const Var<T>& x);

// Frozen convenience wrappers over stacked images [N,3,S,S].
Tensor<float> embed(const Embedder& e, const Tensor<float>& images);
Tensor<float> penultimate_features(const Embedder& e, const Tensor<float>& images);

struct LabeledImage {
  const Tensor<float>* image;  // [3,S,S]
  int label;
};

struct SeparationStats {
  double same_mean = 0;
  double cross_mean = 0;
  double margin() const { return same_mean - cross_mean; }
};

// Mean same-label and cross-label cosine over all distinct pairs.
SeparationStats separation(const Embedder& e, const std::vector<LabeledImage>& images);

struct TrainEmbedderResult {
  Embedder embedder;
  SeparationStats heldout;
  std::vector<double> epoch_losses;
};

// Margin-softmax identity classification. Throws NumericError when the held-out
// separation margin stays below config.min_separation after all epochs.
TrainEmbedderResult train_embedder(const EmbedderConfig& cfg, const std::vector<LabeledImage>& train,
                                   const std::vector<LabeledImage>& heldout,
                                   const std::function<void(int, double, double)>& progress = {});

void save_embedder(const std::filesystem::path& path, const Embedder& e);
Embedder load_embedder(const std::filesystem::path& path, std::optional<Role> expected_role = std::nullopt);

}  // namespace anchortune::embed
