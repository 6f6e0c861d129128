// Copyright (C) 2026 The angiodiff authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <vector>

namespace angiodiff {

/// 8-bit single-channel image, row-major.
struct GrayImage {
  int width = 0;
  int height = 0;
  std::vector<std::uint8_t> pixels;

  GrayImage() = default;
  GrayImage(int w, int h, std::uint8_t fill = 0)
      : width(w), height(h), pixels(static_cast<std::size_t>(w) * h, fill) {}

  bool square() const { return width == height && width > 0; }
  std::uint8_t& at(int x, int y) { return pixels[static_cast<std::size_t>(y) * width + x]; }
  std::uint8_t at(int x, int y) const { return pixels[static_cast<std::size_t>(y) * width + x]; }
};

/// Reads an 8-bit grayscale PNG. Colour or 16-bit inputs are rejected.
GrayImage read_png(const std::filesystem::path& path);
void write_png(const std::filesystem::path& path, const GrayImage& image);

/// Intensities divided by 255.
std::vector<float> to_unit(const GrayImage& image);
/// Clamps to [0,1] and rounds to the nearest 8-bit level.
GrayImage from_unit(std::span<const float> values, int width, int height);

GrayImage resize_bilinear(const GrayImage& image, int width, int height);
std::vector<float> resize_bilinear(std::span<const float> values, int width, int height,
                                   int out_width, int out_height);

}  // namespace angiodiff
