#include "anchortune/evaluation/identity_score.hpp"

#include <cmath>

#include "anchortune/error.hpp"
#include "anchortune/model/mat_lite.hpp"

namespace anchortune::eval {

namespace {

void require_evaluation_role(const embed::Embedder& e) {
  if (e.config.role != embed::Role::Evaluation)
    throw DomainError("metrics need the evaluation-role embedder, got role '" +
                      std::string(embed::to_string(e.config.role)) + "'");
}

Tensor<float> stacked(const std::vector<Tensor<float>>& images) {
  std::vector<const Tensor<float>*> items;
  for (const auto& t : images) items.push_back(&t);
  return model::stack(items);
}

}  // namespace

double mean_pairwise_cosine(const Tensor<float>& a, const Tensor<float>& b) {
  if (a.rank() != 2 || b.rank() != 2 || a.dim(1) != b.dim(1))
    throw ShapeError("mean_pairwise_cosine: shapes " + shape_str(a.shape()) + " and " + shape_str(b.shape()));
  const int na = a.dim(0), nb = b.dim(0), d = a.dim(1);
  std::vector<double> norm_b(static_cast<std::size_t>(nb));
  for (int j = 0; j < nb; ++j) {
    double s = 0;
    for (int k = 0; k < d; ++k) s += double(b[j * d + k]) * b[j * d + k];
    norm_b[j] = std::sqrt(s);
  }
  double total = 0;
  for (int i = 0; i < na; ++i) {
    double sa = 0;
    for (int k = 0; k < d; ++k) sa += double(a[i * d + k]) * a[i * d + k];
    const double norm_a = std::sqrt(sa);
    double row = 0;
    for (int j = 0; j < nb; ++j) {
      double dot = 0;
      for (int k = 0; k < d; ++k) dot += double(a[i * d + k]) * b[j * d + k];
      if (norm_a == 0 || norm_b[j] == 0) throw DomainError("mean_pairwise_cosine: zero-norm embedding");
      row += dot / (norm_a * norm_b[j]);
    }
    total += row;
  }
  return total / (static_cast<double>(na) * nb);
}

double identity_score(const embed::Embedder& evaluation, const std::vector<Tensor<float>>& inpainted,
                      const std::vector<Tensor<float>>& ground_truth) {
  require_evaluation_role(evaluation);
  if (inpainted.empty() || ground_truth.empty()) throw DomainError("identity_score: empty image set");
  return mean_pairwise_cosine(embed::embed(evaluation, stacked(inpainted)), embed::embed(evaluation, stacked(ground_truth)));
}

Tensor<float> frechet_features(const embed::Embedder& evaluation, const std::vector<Tensor<float>>& images) {
  require_evaluation_role(evaluation);
  if (images.empty()) throw DomainError("frechet_features: empty image set");
  return embed::penultimate_features(evaluation, stacked(images));
}

}  // namespace anchortune::eval
