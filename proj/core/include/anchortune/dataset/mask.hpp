#pragma once

#include <cstdint>
#include <optional>
#include <string_view>

#include "anchortune/numerics/tensor.hpp"

namespace anchortune::data {

enum class MaskKind { Rectangle, FreeForm };

std::string_view to_string(MaskKind k);
std::optional<MaskKind> mask_kind_from_string(std::string_view s);

struct MaskSpec {
  MaskKind kind = MaskKind::FreeForm;
  double hole_fraction = 0.3;  // target, in (0, 0.6]
  std::uint64_t seed = 0;
  bool centered = false;  // keep the hole near the image center (face region)
};

// Achieved hole fraction stays within this relative band of the target.
inline constexpr double kHoleFractionTolerance = 0.2;

// [1, size, size] with 1 = known pixel, 0 = hole. Deterministic in the spec.
Tensor<float> generate_mask(const MaskSpec& spec, int size);

// Axis-aligned rectangular hole [x0, x0+w) x [y0, y0+h).
Tensor<float> rectangle_mask(int size, int x0, int y0, int w, int h);

double hole_fraction(const Tensor<float>& mask);
int hole_count(const Tensor<float>& mask);

// Validates a [1,H,W] binary mask with at least one known and one hole pixel.
void check_inpaint_mask(const Tensor<float>& mask, int height, int width);

}  // namespace anchortune::data
