#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "anchortune/dataset/corpus.hpp"
#include "anchortune/model/checkpoint.hpp"
#include "anchortune/model/feature_extractor.hpp"

namespace anchortune::tuning {

enum class AnchorOrigin { Random, Optimized, Perturbed };

std::string_view to_string(AnchorOrigin o);
std::optional<AnchorOrigin> anchor_origin_from_string(std::string_view s);

// A fixed noise-style code s_u. Perturbed anchors record their parent and the
// seed of their epsilon draw.
struct StyleAnchor {
  std::string id;
  std::vector<float> s_u;
  AnchorOrigin origin = AnchorOrigin::Random;
  std::string parent;  // empty unless perturbed
  std::uint64_t seed = 0;

  friend bool operator==(const StyleAnchor&, const StyleAnchor&) = default;
};

class AnchorStore {
 public:
  void add(StyleAnchor a);
  bool contains(std::string_view id) const;
  const StyleAnchor& at(std::string_view id) const;
  const std::vector<StyleAnchor>& anchors() const noexcept { return anchors_; }
  std::size_t size() const noexcept { return anchors_.size(); }

  std::string to_json() const;
  static AnchorStore from_json(std::string_view text, const std::string& source = "anchor store");
  void save(const std::filesystem::path& path) const;
  static AnchorStore load(const std::filesystem::path& path);

  friend bool operator==(const AnchorStore& a, const AnchorStore& b) { return a.anchors_ == b.anchors_; }

 private:
  std::vector<StyleAnchor> anchors_;
};

// Anchor ids used throughout: base anchors "ref:<i>", cluster members
// "ref:<i>~<j>" (around ref i, serving image j), regularization anchors "reg:<t>".
std::string base_anchor_id(int ref);
std::string cluster_anchor_id(int parent_ref, int image);
std::string reg_anchor_id(int t);

// z for anchor index i under `seed`; the same draw feeds random and optimized init.
Tensor<float> anchor_noise(int style_dim, std::uint64_t seed, int index);

// s_u = map_noise(z_i) for n references, tagged random.
std::vector<StyleAnchor> init_anchors_random(const model::MatModel& m, int n, std::uint64_t seed);

struct AnchorOptConfig {
  int steps = 200;
  double learning_rate = 0.5;
  double hole_fraction = 0.3;
};

struct OptimizedAnchors {
  std::vector<StyleAnchor> anchors;
  std::vector<double> initial_loss;
  std::vector<double> final_loss;
};

// Per reference, gradient descent on z (model frozen) for the reconstruction
// loss under a random mask; steps that raise a reference's loss are rejected
// and halve that reference's step size.
OptimizedAnchors init_anchors_optimized(const model::MatModel& m, const model::FeatureExtractor& fe,
                                        const std::vector<Tensor<float>>& refs, const AnchorOptConfig& cfg,
                                        std::uint64_t seed);

struct ReferenceGroup {
  std::string label;
  std::vector<int> members;  // indices into the identity's train records, manifest order
};

// One group per distinct label, ordered by label. With grouping off all
// references form one group labelled "mixed".
std::vector<ReferenceGroup> group_references(const data::Manifest& m, int identity, bool grouping = true);

// Adds |X_m| - 1 perturbed anchors s + sigma * eps around every base anchor of each group.
void build_anchor_clusters(const std::vector<ReferenceGroup>& groups, AnchorStore& store, double sigma,
                           std::uint64_t seed);

}  // namespace anchortune::tuning
