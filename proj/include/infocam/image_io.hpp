#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <vector>

#include "infocam/array.hpp"
#include "infocam/localize.hpp"

namespace infocam::img {

/// 8-bit RGB raster, row-major.
struct Rgb {
  std::size_t height = 0, width = 0;
  std::vector<std::uint8_t> pixels;  // 3 * height * width

  Rgb(std::size_t h, std::size_t w) : height(h), width(w), pixels(3 * h * w, 0) {}
  void put(std::size_t r, std::size_t c, std::uint8_t red, std::uint8_t green, std::uint8_t blue);
};

/// Binary P5, maxval 255. Values are min-max scaled unless `already_unit`
/// (then clamped from [0,1]).
void write_pgm(const std::filesystem::path& path, const Array& gray, bool already_unit = false);

/// Binary P6, maxval 255.
void write_ppm(const std::filesystem::path& path, const Rgb& image);

/// Grayscale image with ground-truth boxes in red and the prediction in green.
Rgb overlay(const Array& image, std::span<const loc::Box> ground_truth, const loc::Box& predicted);

/// Heatmap resized to the image and alpha-blended on top of it.
Rgb heat_overlay(const Array& image, const Array& map);

}  // namespace infocam::img
