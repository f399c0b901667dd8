#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include <json.hpp>

#include "anchortune/dataset/identity.hpp"
#include "anchortune/dataset/mask.hpp"
#include "anchortune/numerics/tensor.hpp"

namespace anchortune::data {

enum class Split { Train, Test, Reg };

std::string_view to_string(Split s);
std::optional<Split> split_from_string(std::string_view s);

// Group labels are accessory labels plus "dim" for low-light references.
inline constexpr std::string_view kGroupLabels[] = {"none", "glasses", "sunglasses", "dim"};
bool is_group_label(std::string_view label);

struct ImageRecord {
  std::string path;       // relative to the manifest's directory
  int identity = 0;
  std::string group = "none";
  Split split = Split::Train;
  std::string mask_path;  // optional fixed mask, relative; empty if none
  std::uint64_t identity_seed = 0;
  NuisanceSpec nuisance;

  friend bool operator==(const ImageRecord&, const ImageRecord&) = default;
};

inline bool operator==(const NuisanceSpec& a, const NuisanceSpec& b) {
  return a.yaw == b.yaw && a.lighting == b.lighting && a.accessory == b.accessory && a.expression == b.expression;
}

struct Manifest {
  int image_size = 32;
  std::vector<ImageRecord> records;

  void validate() const;
  std::vector<const ImageRecord*> select(std::optional<Split> split, std::optional<int> identity = std::nullopt) const;
  friend bool operator==(const Manifest&, const Manifest&) = default;
};

std::string manifest_to_json(const Manifest& m);
Manifest manifest_from_json(std::string_view text);
void save_manifest(const std::filesystem::path& path, const Manifest& m);
Manifest load_manifest(const std::filesystem::path& path);

struct CorpusConfig {
  int image_size = 32;
  std::uint64_t seed = 0;

  // multi-identity pool for pre-training and embedder training
  int pretrain_identities = 48;
  int renders_per_identity = 24;
  int holdout_per_identity = 4;  // tagged test; never used for training

  // target person
  int references = 40;
  std::vector<std::pair<std::string, double>> reference_groups = {
      {"none", 0.5}, {"glasses", 0.25}, {"sunglasses", 0.25}};
  int test_images = 35;
  int reg_images = 30;
  int off_identity_images = 60;
  int off_identity_count = 30;

  MaskKind eval_mask_kind = MaskKind::Rectangle;
  double eval_hole_fraction = 0.35;

  void validate() const;
};

void to_json(nlohmann::json& j, const CorpusConfig& c);
void from_json(const nlohmann::json& j, CorpusConfig& c);

struct CorpusPaths {
  std::filesystem::path pretrain;      // multi-identity pool
  std::filesystem::path person;        // target identity train/test + reg set
  std::filesystem::path off_identity;  // non-target faces with fixed masks
};

// Identity of the train records of a person manifest; error unless unique.
int person_identity(const Manifest& m);

CorpusPaths corpus_paths(const std::filesystem::path& root);
CorpusPaths build_corpus(const CorpusConfig& config, const std::filesystem::path& root);

// Largest-remainder split of `total` across weighted labels.
std::vector<std::pair<std::string, int>> allocate_groups(int total,
                                                         const std::vector<std::pair<std::string, double>>& weights);

struct LoadedImage {
  const ImageRecord* record;
  Tensor<float> image;
  std::optional<Tensor<float>> mask;
};

// Loads images (and fixed masks when present) for the given records.
std::vector<LoadedImage> load_records(const std::filesystem::path& manifest_path,
                                      const std::vector<const ImageRecord*>& records);

// Re-renders a record from its stored identity seed and nuisance.
Tensor<float> render_record(const ImageRecord& r, int size);

}  // namespace anchortune::data
