// Copyright (C) 2026 The angiodiff authors
// SPDX-License-Identifier: Apache-2.0

#include "angiodiff/image.hpp"

#include <png.h>

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <memory>

#include "angiodiff/common.hpp"

namespace angiodiff {
namespace {

struct FileCloser {
  void operator()(std::FILE* f) const {
    if (f) std::fclose(f);
  }
};
using FilePtr = std::unique_ptr<std::FILE, FileCloser>;

}  // namespace

GrayImage read_png(const std::filesystem::path& path) {
  FilePtr fp(std::fopen(path.c_str(), "rb"));
  if (!fp) throw ValidationError("cannot open image " + path.string());

  png_structp png = png_create_read_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
  png_infop info = png ? png_create_info_struct(png) : nullptr;
  if (!png || !info) {
    png_destroy_read_struct(&png, &info, nullptr);
    throw std::runtime_error("libpng init failed");
  }
  GrayImage image;
  std::vector<png_bytep> rows;
  if (setjmp(png_jmpbuf(png))) {
    png_destroy_read_struct(&png, &info, nullptr);
    throw ValidationError("corrupt PNG " + path.string());
  }
  png_init_io(png, fp.get());
  png_read_info(png, info);
  const auto color = png_get_color_type(png, info);
  const auto depth = png_get_bit_depth(png, info);
  if (color != PNG_COLOR_TYPE_GRAY || depth > 8) {
    png_destroy_read_struct(&png, &info, nullptr);
    throw ValidationError("not an 8-bit single-channel PNG: " + path.string());
  }
  if (depth < 8) png_set_expand_gray_1_2_4_to_8(png);
  png_read_update_info(png, info);
  image = GrayImage(static_cast<int>(png_get_image_width(png, info)),
                    static_cast<int>(png_get_image_height(png, info)));
  rows.resize(static_cast<std::size_t>(image.height));
  for (int y = 0; y < image.height; ++y) rows[y] = &image.pixels[static_cast<std::size_t>(y) * image.width];
  png_read_image(png, rows.data());
  png_read_end(png, nullptr);
  png_destroy_read_struct(&png, &info, nullptr);
  return image;
}

void write_png(const std::filesystem::path& path, const GrayImage& image) {
  if (image.width <= 0 || image.height <= 0) throw ValidationError("empty image");
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  FilePtr fp(std::fopen(path.c_str(), "wb"));
  if (!fp) throw ValidationError("cannot write image " + path.string());

  png_structp png = png_create_write_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
  png_infop info = png ? png_create_info_struct(png) : nullptr;
  if (!png || !info) {
    png_destroy_write_struct(&png, &info);
    throw std::runtime_error("libpng init failed");
  }
  if (setjmp(png_jmpbuf(png))) {
    png_destroy_write_struct(&png, &info);
    throw std::runtime_error("PNG write failed: " + path.string());
  }
  png_init_io(png, fp.get());
  png_set_IHDR(png, info, static_cast<png_uint_32>(image.width), static_cast<png_uint_32>(image.height),
               8, PNG_COLOR_TYPE_GRAY, PNG_INTERLACE_NONE, PNG_COMPRESSION_TYPE_DEFAULT,
               PNG_FILTER_TYPE_DEFAULT);
  png_write_info(png, info);
  for (int y = 0; y < image.height; ++y) {
    png_write_row(png, const_cast<png_bytep>(&image.pixels[static_cast<std::size_t>(y) * image.width]));
  }
  png_write_end(png, nullptr);
  png_destroy_write_struct(&png, &info);
}

std::vector<float> to_unit(const GrayImage& image) {
  std::vector<float> out(image.pixels.size());
  std::transform(image.pixels.begin(), image.pixels.end(), out.begin(),
                 [](std::uint8_t v) { return static_cast<float>(v) / 255.0f; });
  return out;
}

GrayImage from_unit(std::span<const float> values, int width, int height) {
  if (values.size() != static_cast<std::size_t>(width) * height) {
    throw ValidationError("pixel count does not match image shape");
  }
  GrayImage image(width, height);
  for (std::size_t i = 0; i < values.size(); ++i) {
    const float v = std::isfinite(values[i]) ? std::clamp(values[i], 0.0f, 1.0f) : 0.0f;
    image.pixels[i] = static_cast<std::uint8_t>(std::lround(v * 255.0f));
  }
  return image;
}

std::vector<float> resize_bilinear(std::span<const float> values, int width, int height, int out_width,
                                   int out_height) {
  if (out_width <= 0 || out_height <= 0) throw ValidationError("resize target must be positive");
  if (out_width == width && out_height == height) return {values.begin(), values.end()};
  std::vector<float> out(static_cast<std::size_t>(out_width) * out_height);
  const float sx = static_cast<float>(width) / out_width;
  const float sy = static_cast<float>(height) / out_height;
  for (int y = 0; y < out_height; ++y) {
    // Pixel-centre alignment.
    const float fy = std::clamp((y + 0.5f) * sy - 0.5f, 0.0f, static_cast<float>(height - 1));
    const int y0 = static_cast<int>(fy);
    const int y1 = std::min(y0 + 1, height - 1);
    const float wy = fy - y0;
    for (int x = 0; x < out_width; ++x) {
      const float fx = std::clamp((x + 0.5f) * sx - 0.5f, 0.0f, static_cast<float>(width - 1));
      const int x0 = static_cast<int>(fx);
      const int x1 = std::min(x0 + 1, width - 1);
      const float wx = fx - x0;
      const auto v = [&](int xx, int yy) { return values[static_cast<std::size_t>(yy) * width + xx]; };
      out[static_cast<std::size_t>(y) * out_width + x] =
          (1 - wy) * ((1 - wx) * v(x0, y0) + wx * v(x1, y0)) + wy * ((1 - wx) * v(x0, y1) + wx * v(x1, y1));
    }
  }
  return out;
}

GrayImage resize_bilinear(const GrayImage& image, int width, int height) {
  const auto unit = to_unit(image);
  const auto resized = resize_bilinear(unit, image.width, image.height, width, height);
  return from_unit(resized, width, height);
}

}  // namespace angiodiff
