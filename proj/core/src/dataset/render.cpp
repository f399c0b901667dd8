#include "anchortune/dataset/render.hpp"

#include <algorithm>
#include <cmath>

#include "anchortune/error.hpp"

namespace anchortune::data {
namespace {

struct Rgb {
  double r, g, b;
};

Rgb lerp(Rgb a, Rgb b, double t) { return {a.r + (b.r - a.r) * t, a.g + (b.g - a.g) * t, a.b + (b.b - a.b) * t}; }
Rgb scale(Rgb c, double k) { return {c.r * k, c.g * k, c.b * k}; }

// Layout in normalized image coordinates (u right, v down, both in [0, 1]).
struct Layout {
  double cx, cy;      // face center
  double a, b;        // face half-width, half-height
  double fx;          // feature axis, shifted further than the outline by yaw
  double eye_y, eye_dx;
  double eye_rx, eye_ry;
  double brow_y;
  double mouth_y;
};

Layout layout(const IdentitySpec& id, const NuisanceSpec& n) {
  Layout l{};
  l.cx = 0.5 + 0.04 * n.yaw;
  l.cy = 0.54;
  l.a = 0.29;
  l.b = l.a * id.face_aspect;
  l.fx = l.cx + 0.07 * n.yaw;
  l.eye_y = l.cy - 0.08;
  l.eye_dx = id.eye_spacing * l.a * std::cos(0.8 * n.yaw);
  l.eye_rx = id.eye_size * 1.3;
  l.eye_ry = id.eye_size * 0.85;
  l.brow_y = l.eye_y - l.eye_ry - 0.035;
  l.mouth_y = l.cy + 0.15;
  return l;
}

double sq(double x) { return x * x; }

bool in_ellipse(double u, double v, double cx, double cy, double rx, double ry) {
  return sq((u - cx) / rx) + sq((v - cy) / ry) <= 1.0;
}

double segment_distance(double u, double v, double x0, double y0, double x1, double y1) {
  const double dx = x1 - x0, dy = y1 - y0;
  const double t = std::clamp(((u - x0) * dx + (v - y0) * dy) / (dx * dx + dy * dy), 0.0, 1.0);
  return std::hypot(u - (x0 + t * dx), v - (y0 + t * dy));
}

Rgb shade_sample(const IdentitySpec& id, const NuisanceSpec& n, const Layout& l, double u, double v) {
  const Rgb bg = lerp({0.55, 0.62, 0.72}, {0.36, 0.42, 0.52}, v);
  const Rgb skin = lerp({0.96, 0.80, 0.69}, {0.45, 0.30, 0.22}, id.skin_tone);
  const Rgb hair = lerp({0.08, 0.06, 0.05}, {0.86, 0.72, 0.42}, id.hair_tone);

  bool lit = false;
  Rgb c = bg;
  // hair cap behind the face
  if (in_ellipse(u, v, l.cx, l.cy - 0.12, l.a + 0.05, l.b * 0.85)) c = hair, lit = true;
  if (u >= l.cx - 0.11 && u <= l.cx + 0.11 && v >= l.cy + l.b * 0.7) c = scale(skin, 0.85), lit = true;

  if (in_ellipse(u, v, l.cx, l.cy, l.a, l.b)) {
    lit = true;
    const double r2 = sq((u - (l.cx - 0.06 + 0.12 * n.yaw)) / l.a) + sq((v - (l.cy - 0.06)) / l.b);
    c = scale(skin, 1.0 - 0.22 * std::min(r2, 1.5));

    // nose shadow
    if (in_ellipse(u, v, l.fx, l.cy, id.nose_width / 2, 0.075)) c = scale(c, 0.82);

    // mouth, corners lifted by a smile
    const double mu = (u - l.fx) / id.mouth_width;
    if (std::abs(mu) <= 1.0) {
      const double centre = l.mouth_y - n.expression * 0.035 * mu * mu;
      const double half_h = (0.016 + 0.010 * std::abs(n.expression)) * std::sqrt(1.0 - mu * mu);
      if (std::abs(v - centre) <= half_h) c = {0.70, 0.25, 0.28};
    }

    for (int side : {-1, 1}) {
      const double ex = l.fx + side * l.eye_dx;
      if (in_ellipse(u, v, ex, l.eye_y, l.eye_rx, l.eye_ry)) {
        c = {0.95, 0.95, 0.94};
        if (in_ellipse(u, v, ex + 0.012 * n.yaw, l.eye_y, id.eye_size * 0.62, id.eye_size * 0.62)) c = {0.20, 0.12, 0.08};
      }
      // brow: outer end raised by brow_angle
      const double half = 0.06;
      const double x_in = ex - side * half, x_out = ex + side * half;
      const double rise = std::sin(id.brow_angle) * half;
      if (segment_distance(u, v, x_in, l.brow_y + rise, x_out, l.brow_y - rise) <= id.brow_thickness / 2)
        c = scale(hair, 0.6);
    }

    if (n.accessory != Accessory::None) {
      const Rgb frame{0.10, 0.10, 0.10};
      const double rx = l.eye_rx + 0.035, ry = l.eye_ry + 0.030;
      for (int side : {-1, 1}) {
        const double ex = l.fx + side * l.eye_dx;
        const bool inside = in_ellipse(u, v, ex, l.eye_y, rx, ry);
        if (n.accessory == Accessory::Sunglasses && inside) c = {0.06, 0.06, 0.08};
        if (inside && !in_ellipse(u, v, ex, l.eye_y, rx - 0.016, ry - 0.016)) c = frame;
      }
      if (std::abs(v - l.eye_y) <= 0.008 && std::abs(u - l.fx) <= l.eye_dx - rx + 0.01) c = frame;
    }
  }
  return lit ? scale(c, n.lighting) : c;
}

void check_size(int size) {
  if (!is_supported_size(size)) throw DomainError("render size " + std::to_string(size) + " unsupported (expected 32 or 64)");
}

}  // namespace

bool is_supported_size(int size) { return std::find(std::begin(kSizes), std::end(kSizes), size) != std::end(kSizes); }

Tensor<float> render_face(const IdentitySpec& id, const NuisanceSpec& n, int size) {
  check_size(size);
  n.validate();
  const Layout l = layout(id, n);
  Tensor<float> img({3, size, size});
  const int plane = size * size;
  constexpr int kSuper = 3;
  for (int y = 0; y < size; ++y) {
    for (int x = 0; x < size; ++x) {
      Rgb acc{0, 0, 0};
      for (int sy = 0; sy < kSuper; ++sy)
        for (int sx = 0; sx < kSuper; ++sx) {
          const double u = (x + (sx + 0.5) / kSuper) / size;
          const double v = (y + (sy + 0.5) / kSuper) / size;
          const Rgb c = shade_sample(id, n, l, u, v);
          acc.r += std::clamp(c.r, 0.0, 1.0);
          acc.g += std::clamp(c.g, 0.0, 1.0);
          acc.b += std::clamp(c.b, 0.0, 1.0);
        }
      const double k = 1.0 / (kSuper * kSuper);
      const int i = y * size + x;
      img[i] = static_cast<float>(2.0 * acc.r * k - 1.0);
      img[plane + i] = static_cast<float>(2.0 * acc.g * k - 1.0);
      img[2 * plane + i] = static_cast<float>(2.0 * acc.b * k - 1.0);
    }
  }
  return img;
}

Tensor<float> eye_region_mask(const IdentitySpec& id, const NuisanceSpec& n, int size) {
  check_size(size);
  const Layout l = layout(id, n);
  Tensor<float> m({1, size, size});
  const double hx = l.eye_rx + 0.045, hy = l.eye_ry + 0.040;
  for (int y = 0; y < size; ++y)
    for (int x = 0; x < size; ++x) {
      const double u = (x + 0.5) / size, v = (y + 0.5) / size;
      bool in = false;
      for (int side : {-1, 1})
        in = in || (std::abs(u - (l.fx + side * l.eye_dx)) <= hx && std::abs(v - l.eye_y) <= hy);
      m[y * size + x] = in ? 1.0f : 0.0f;
    }
  return m;
}

float luminance(float r, float g, float b) {
  return 0.299f * (r + 1.0f) * 0.5f + 0.587f * (g + 1.0f) * 0.5f + 0.114f * (b + 1.0f) * 0.5f;
}

namespace {
void check_image(const Tensor<float>& img) {
  if (img.rank() != 3 || img.dim(0) != 3) throw ShapeError("expected image [3,H,W], got " + shape_str(img.shape()));
}
float luma_at(const Tensor<float>& img, int i) {
  const int plane = img.dim(1) * img.dim(2);
  return luminance(img[i], img[plane + i], img[2 * plane + i]);
}
void check_region(const Tensor<float>& a, const Tensor<float>& b, const Tensor<float>& region) {
  check_image(a);
  check_image(b);
  if (a.shape() != b.shape()) throw ShapeError("image shapes differ: " + shape_str(a.shape()) + " vs " + shape_str(b.shape()));
  if (region.shape() != Shape{1, a.dim(1), a.dim(2)})
    throw ShapeError("region " + shape_str(region.shape()) + " does not match image " + shape_str(a.shape()));
}
}  // namespace

double mean_luminance(const Tensor<float>& image) {
  check_image(image);
  const int plane = image.dim(1) * image.dim(2);
  double s = 0;
  for (int i = 0; i < plane; ++i) s += luma_at(image, i);
  return s / plane;
}

double region_mean_abs_luma_diff(const Tensor<float>& a, const Tensor<float>& b, const Tensor<float>& region) {
  check_region(a, b, region);
  double s = 0, n = 0;
  for (int i = 0; i < static_cast<int>(region.size()); ++i)
    if (region[i] > 0.5f) s += std::abs(luma_at(a, i) - luma_at(b, i)), n += 1;
  if (n == 0) throw DomainError("empty region");
  return s / n;
}

double eye_luminance_deficit(const Tensor<float>& image, const Tensor<float>& reference, const Tensor<float>& region) {
  check_region(image, reference, region);
  double s = 0, n = 0;
  for (int i = 0; i < static_cast<int>(region.size()); ++i)
    if (region[i] > 0.5f) s += std::max(0.0f, luma_at(reference, i) - luma_at(image, i)), n += 1;
  if (n == 0) throw DomainError("empty region");
  return s / n;
}

}  // namespace anchortune::data
