#pragma once

#include <vector>

#include "anchortune/embedder/embedder.hpp"

namespace anchortune::eval {

// Mean cosine over all (row of a, row of b) pairs.
double mean_pairwise_cosine(const Tensor<float>& a, const Tensor<float>& b);

// Mean cosine between evaluation-embedder embeddings of every inpainted image
// and every ground-truth image. Rejects the tuning-role embedder.
double identity_score(const embed::Embedder& evaluation, const std::vector<Tensor<float>>& inpainted,
                      const std::vector<Tensor<float>>& ground_truth);

// Penultimate-layer features of a set of [3,S,S] images, [n, penultimate_dim].
Tensor<float> frechet_features(const embed::Embedder& evaluation, const std::vector<Tensor<float>>& images);

}  // namespace anchortune::eval
