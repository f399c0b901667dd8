#pragma once

#include "anchortune/dataset/identity.hpp"
#include "anchortune/numerics/tensor.hpp"

namespace anchortune::data {

// Supported square render resolutions.
inline constexpr int kSizes[] = {32, 64};
bool is_supported_size(int size);

// Layered parametric face drawing, [3, size, size] with values in [-1, 1]
// (linear map of [0, 1] intensities). Deterministic in its arguments.
Tensor<float> render_face(const IdentitySpec& id, const NuisanceSpec& n, int size);

// [1, size, size] indicator of the region around both eyes, which is where
// glasses and sunglasses are drawn.
Tensor<float> eye_region_mask(const IdentitySpec& id, const NuisanceSpec& n, int size);

// Rec. 601 luma of an RGB pixel given in [-1, 1], returned in [0, 1].
float luminance(float r, float g, float b);
double mean_luminance(const Tensor<float>& image);

// Mean absolute per-pixel luminance difference inside `region` ([1,H,W]).
double region_mean_abs_luma_diff(const Tensor<float>& a, const Tensor<float>& b, const Tensor<float>& region);

// Mean over eye-region pixels of max(0, luma(reference) - luma(image)): how
// much darker an image is than the reference around the eyes.
double eye_luminance_deficit(const Tensor<float>& image, const Tensor<float>& reference, const Tensor<float>& region);

// Lower bound on region_mean_abs_luma_diff between the sunglasses and the
// no-accessory render of the same identity and pose, calibrated over the
// generator at both sizes and pinned; the dataset tests re-check it.
inline constexpr double kEyeDetectionThreshold = 0.08;

}  // namespace anchortune::data
