#include "anchortune/dataset/image_io.hpp"

#include <png.h>

#include <algorithm>
#include <cmath>
#include <cstring>
#include <vector>

#include "anchortune/error.hpp"

namespace anchortune::data {
namespace {

void write_png(const std::filesystem::path& path, int width, int height, bool rgb, const std::vector<std::uint8_t>& px) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  png_image img;
  std::memset(&img, 0, sizeof img);
  img.version = PNG_IMAGE_VERSION;
  img.width = static_cast<png_uint_32>(width);
  img.height = static_cast<png_uint_32>(height);
  img.format = rgb ? PNG_FORMAT_RGB : PNG_FORMAT_GRAY;
  if (!png_image_write_to_file(&img, path.c_str(), 0, px.data(), 0, nullptr))
    throw IoError("cannot write " + path.string() + ": " + img.message);
}

std::vector<std::uint8_t> read_png(const std::filesystem::path& path, bool rgb, int& width, int& height) {
  png_image img;
  std::memset(&img, 0, sizeof img);
  img.version = PNG_IMAGE_VERSION;
  if (!png_image_begin_read_from_file(&img, path.c_str()))
    throw IoError("cannot read " + path.string() + ": " + img.message);
  img.format = rgb ? PNG_FORMAT_RGB : PNG_FORMAT_GRAY;
  std::vector<std::uint8_t> px(PNG_IMAGE_SIZE(img));
  if (!png_image_finish_read(&img, nullptr, px.data(), 0, nullptr)) {
    png_image_free(&img);
    throw IoError("cannot decode " + path.string() + ": " + img.message);
  }
  width = static_cast<int>(img.width);
  height = static_cast<int>(img.height);
  return px;
}

}  // namespace

std::uint8_t to_byte(float v) {
  const double c = std::clamp(static_cast<double>(v), -1.0, 1.0);
  return static_cast<std::uint8_t>(std::lround((c + 1.0) * 127.5));
}

float from_byte(std::uint8_t b) { return static_cast<float>(b / 127.5 - 1.0); }

Tensor<float> quantize(const Tensor<float>& image) {
  Tensor<float> out(image.shape());
  for (std::size_t i = 0; i < image.size(); ++i) out[i] = from_byte(to_byte(image[i]));
  return out;
}

void write_image_png(const std::filesystem::path& path, const Tensor<float>& image) {
  if (image.rank() != 3 || image.dim(0) != 3) throw ShapeError("expected image [3,H,W], got " + shape_str(image.shape()));
  const int h = image.dim(1), w = image.dim(2), plane = h * w;
  std::vector<std::uint8_t> px(static_cast<std::size_t>(plane) * 3);
  for (int i = 0; i < plane; ++i)
    for (int c = 0; c < 3; ++c) px[i * 3 + c] = to_byte(image[c * plane + i]);
  write_png(path, w, h, true, px);
}

Tensor<float> read_image_png(const std::filesystem::path& path) {
  int w = 0, h = 0;
  const auto px = read_png(path, true, w, h);
  const int plane = h * w;
  Tensor<float> image({3, h, w});
  for (int i = 0; i < plane; ++i)
    for (int c = 0; c < 3; ++c) image[c * plane + i] = from_byte(px[i * 3 + c]);
  return image;
}

void write_mask_png(const std::filesystem::path& path, const Tensor<float>& mask) {
  if (mask.rank() != 3 || mask.dim(0) != 1) throw ShapeError("expected mask [1,H,W], got " + shape_str(mask.shape()));
  std::vector<std::uint8_t> px(mask.size());
  for (std::size_t i = 0; i < mask.size(); ++i) {
    if (mask[i] != 0.0f && mask[i] != 1.0f) throw DomainError("mask values must be 0 or 1 for " + path.string());
    px[i] = mask[i] == 1.0f ? 255 : 0;
  }
  write_png(path, mask.dim(2), mask.dim(1), false, px);
}

Tensor<float> read_mask_png(const std::filesystem::path& path) {
  int w = 0, h = 0;
  const auto px = read_png(path, false, w, h);
  Tensor<float> mask({1, h, w});
  for (std::size_t i = 0; i < px.size(); ++i) {
    if (px[i] != 0 && px[i] != 255)
      throw FormatError("mask " + path.string() + " has byte " + std::to_string(px[i]) + " (expected 0 or 255)");
    mask[i] = px[i] == 255 ? 1.0f : 0.0f;
  }
  return mask;
}

}  // namespace anchortune::data
