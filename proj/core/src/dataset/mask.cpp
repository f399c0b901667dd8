#include "anchortune/dataset/mask.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>

#include "anchortune/error.hpp"
#include "anchortune/numerics/random.hpp"

namespace anchortune::data {
namespace {

constexpr int kMaxAttempts = 64;

bool within_band(int holes, double target_px) {
  return std::abs(holes - target_px) <= kHoleFractionTolerance * target_px;
}

Tensor<float> try_rectangle(Rng& rng, int size, double target_px, bool centered) {
  const double aspect = std::exp(uniform(rng, std::log(0.5), std::log(2.0)));
  int w = std::clamp(static_cast<int>(std::lround(std::sqrt(target_px * aspect))), 1, size);
  int h = std::clamp(static_cast<int>(std::lround(target_px / w)), 1, size);
  int x0 = static_cast<int>(uniform(rng, 0, size - w + 1));
  int y0 = static_cast<int>(uniform(rng, 0, size - h + 1));
  if (centered) {
    x0 = static_cast<int>(std::lround(uniform(rng, 0.40, 0.60) * size - w / 2.0));
    y0 = static_cast<int>(std::lround(uniform(rng, 0.45, 0.60) * size - h / 2.0));
  }
  x0 = std::max(0, x0);
  y0 = std::max(0, y0);
  return rectangle_mask(size, std::min(x0, size - w), std::min(y0, size - h), w, h);
}

void stamp_disc(Tensor<float>& m, int size, double cx, double cy, double r) {
  const int x_lo = std::max(0, static_cast<int>(std::floor(cx - r))), x_hi = std::min(size - 1, static_cast<int>(std::ceil(cx + r)));
  const int y_lo = std::max(0, static_cast<int>(std::floor(cy - r))), y_hi = std::min(size - 1, static_cast<int>(std::ceil(cy + r)));
  for (int y = y_lo; y <= y_hi; ++y)
    for (int x = x_lo; x <= x_hi; ++x)
      if ((x + 0.5 - cx) * (x + 0.5 - cx) + (y + 0.5 - cy) * (y + 0.5 - cy) <= r * r) m[y * size + x] = 0.0f;
}

// Random-walk brush strokes until the hole count reaches the target.
Tensor<float> try_free_form(Rng& rng, int size, double target_px, bool centered) {
  Tensor<float> m({1, size, size}, 1.0f);
  int holes = 0;
  while (holes < target_px) {
    const double lo = centered ? 0.3 : 0.0, hi = centered ? 0.7 : 1.0;
    double x = uniform(rng, lo, hi) * size, y = uniform(rng, lo + 0.05, hi + 0.05) * size;
    double angle = uniform(rng, 0, 2 * std::numbers::pi);
    const double radius = uniform(rng, 0.04, 0.09) * size;
    const int vertices = 2 + static_cast<int>(uniform(rng, 0, 5));
    for (int v = 0; v < vertices && holes < target_px; ++v) {
      angle += uniform(rng, -1.2, 1.2);
      const double len = uniform(rng, 0.1, 0.3) * size;
      const int n = std::max(1, static_cast<int>(len / (radius * 0.5)));
      for (int k = 0; k < n && holes < target_px; ++k) {
        x = std::clamp(x + std::cos(angle) * len / n, 0.0, static_cast<double>(size));
        y = std::clamp(y + std::sin(angle) * len / n, 0.0, static_cast<double>(size));
        stamp_disc(m, size, x, y, radius);
        holes = hole_count(m);
      }
    }
  }
  return m;
}

}  // namespace

std::string_view to_string(MaskKind k) { return k == MaskKind::Rectangle ? "rectangle" : "free_form"; }

std::optional<MaskKind> mask_kind_from_string(std::string_view s) {
  if (s == "rectangle") return MaskKind::Rectangle;
  if (s == "free_form") return MaskKind::FreeForm;
  return std::nullopt;
}

Tensor<float> generate_mask(const MaskSpec& spec, int size) {
  if (size <= 0) throw DomainError("mask size must be positive, got " + std::to_string(size));
  if (!(spec.hole_fraction > 0.0 && spec.hole_fraction <= 0.6))
    throw DomainError("mask hole fraction " + std::to_string(spec.hole_fraction) + " outside (0, 0.6]");
  const double target_px = spec.hole_fraction * size * size;
  if (target_px * (1 + kHoleFractionTolerance) < 1.0)
    throw DomainError("mask hole fraction " + std::to_string(spec.hole_fraction) + " below one pixel at size " +
                      std::to_string(size));
  auto rng = make_rng(spec.seed, {0x3a5c, static_cast<std::uint64_t>(spec.kind)});
  for (int attempt = 0; attempt < kMaxAttempts; ++attempt) {
    Tensor<float> m = spec.kind == MaskKind::Rectangle ? try_rectangle(rng, size, target_px, spec.centered)
                                                   : try_free_form(rng, size, target_px, spec.centered);
    if (within_band(hole_count(m), target_px)) return m;
  }
  throw DomainError("could not reach mask hole fraction " + std::to_string(spec.hole_fraction) + " within " +
                    std::to_string(kMaxAttempts) + " attempts");
}

Tensor<float> rectangle_mask(int size, int x0, int y0, int w, int h) {
  if (w <= 0 || h <= 0 || x0 < 0 || y0 < 0 || x0 + w > size || y0 + h > size)
    throw DomainError("rectangle (" + std::to_string(x0) + "," + std::to_string(y0) + "," + std::to_string(w) + "," +
                      std::to_string(h) + ") does not fit a " + std::to_string(size) + " mask");
  Tensor<float> m({1, size, size}, 1.0f);
  for (int y = y0; y < y0 + h; ++y)
    for (int x = x0; x < x0 + w; ++x) m[y * size + x] = 0.0f;
  return m;
}

int hole_count(const Tensor<float>& mask) {
  return static_cast<int>(std::count(mask.storage().begin(), mask.storage().end(), 0.0f));
}

double hole_fraction(const Tensor<float>& mask) { return static_cast<double>(hole_count(mask)) / mask.size(); }

void check_inpaint_mask(const Tensor<float>& mask, int height, int width) {
  if (mask.shape() != Shape{1, height, width})
    throw ShapeError("mask " + shape_str(mask.shape()) + " does not match image size " + std::to_string(height) + "x" +
                     std::to_string(width));
  int holes = 0;
  for (float v : mask.data()) {
    if (v != 0.0f && v != 1.0f) throw DomainError("mask values must be 0 or 1");
    holes += v == 0.0f;
  }
  if (holes == 0) throw DomainError("mask has no hole pixel");
  if (holes == static_cast<int>(mask.size())) throw DomainError("mask has no known pixel");
}

}  // namespace anchortune::data
