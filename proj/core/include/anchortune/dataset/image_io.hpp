#pragma once

#include <cstdint>
#include <filesystem>

#include "anchortune/numerics/tensor.hpp"

namespace anchortune::data {

// 8-bit mapping between stored bytes and internal values:
//   images: v = byte / 127.5 - 1, byte = round((clamp(v, -1, 1) + 1) * 127.5)
//   masks:  255 = known (1), 0 = hole (0); any other byte is rejected on load.
std::uint8_t to_byte(float v);
float from_byte(std::uint8_t b);

// Quantizes an image through the 8-bit mapping without touching disk.
Tensor<float> quantize(const Tensor<float>& image);

void write_image_png(const std::filesystem::path& path, const Tensor<float>& image);  // [3,H,W]
Tensor<float> read_image_png(const std::filesystem::path& path);

void write_mask_png(const std::filesystem::path& path, const Tensor<float>& mask);  // [1,H,W]
Tensor<float> read_mask_png(const std::filesystem::path& path);

}  // namespace anchortune::data
