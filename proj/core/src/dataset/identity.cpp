#include "anchortune/dataset/identity.hpp"

#include <algorithm>
#include <cmath>

#include "anchortune/error.hpp"
#include "anchortune/numerics/random.hpp"

namespace anchortune::data {
namespace {

constexpr std::array<ParamRange, IdentitySpec::kDim> kRanges{{
    {"face_aspect", 1.00, 1.35},
    {"eye_spacing", 0.32, 0.55},
    {"eye_size", 0.030, 0.060},
    {"brow_angle", -0.35, 0.35},
    {"brow_thickness", 0.015, 0.040},
    {"nose_width", 0.035, 0.090},
    {"mouth_width", 0.060, 0.140},
    {"skin_tone", 0.0, 1.0},
    {"hair_tone", 0.0, 1.0},
}};

}  // namespace

std::array<double, IdentitySpec::kDim> IdentitySpec::as_array() const {
  return {face_aspect, eye_spacing, eye_size, brow_angle, brow_thickness, nose_width, mouth_width, skin_tone, hair_tone};
}

IdentitySpec IdentitySpec::from_array(const std::array<double, kDim>& v) {
  IdentitySpec s;
  s.face_aspect = v[0];
  s.eye_spacing = v[1];
  s.eye_size = v[2];
  s.brow_angle = v[3];
  s.brow_thickness = v[4];
  s.nose_width = v[5];
  s.mouth_width = v[6];
  s.skin_tone = v[7];
  s.hair_tone = v[8];
  return s;
}

std::span<const ParamRange> identity_ranges() { return kRanges; }

IdentitySpec generate_identity(std::uint64_t seed) {
  auto rng = make_rng(seed, {0x1d3e7u});
  std::array<double, IdentitySpec::kDim> v{};
  for (std::size_t i = 0; i < v.size(); ++i) v[i] = uniform(rng, kRanges[i].lo, kRanges[i].hi);
  return IdentitySpec::from_array(v);
}

double identity_separation(const IdentitySpec& a, const IdentitySpec& b) {
  const auto va = a.as_array(), vb = b.as_array();
  double best = 0;
  for (std::size_t i = 0; i < va.size(); ++i)
    best = std::max(best, std::abs(va[i] - vb[i]) / (kRanges[i].hi - kRanges[i].lo));
  return best;
}

std::string_view to_string(Accessory a) {
  switch (a) {
    case Accessory::None: return "none";
    case Accessory::Glasses: return "glasses";
    case Accessory::Sunglasses: return "sunglasses";
  }
  return "none";
}

std::optional<Accessory> accessory_from_string(std::string_view s) {
  if (s == "none") return Accessory::None;
  if (s == "glasses") return Accessory::Glasses;
  if (s == "sunglasses") return Accessory::Sunglasses;
  return std::nullopt;
}

void NuisanceSpec::validate() const {
  if (!(yaw >= -0.6 && yaw <= 0.6)) throw DomainError("nuisance yaw " + std::to_string(yaw) + " outside [-0.6, 0.6]");
  if (!(lighting >= 0.5 && lighting <= 1.5))
    throw DomainError("nuisance lighting gain " + std::to_string(lighting) + " outside [0.5, 1.5]");
  if (!(expression >= -1.0 && expression <= 1.0))
    throw DomainError("nuisance expression " + std::to_string(expression) + " outside [-1, 1]");
}

}  // namespace anchortune::data
