#include "infocam/image_io.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <string>

namespace infocam::img {

namespace {

std::uint8_t to_byte(double v) {
  return static_cast<std::uint8_t>(std::lround(std::clamp(v, 0.0, 1.0) * 255.0));
}

void draw_rect(Rgb& im, const loc::Box& b, std::uint8_t r, std::uint8_t g, std::uint8_t bl) {
  if (im.height == 0 || im.width == 0) return;
  auto clampc = [&](double v, std::size_t hi) {
    return static_cast<std::size_t>(std::clamp(v, 0.0, static_cast<double>(hi - 1)));
  };
  std::size_t c0 = clampc(b.x0, im.width), c1 = clampc(b.x1 - 1, im.width);
  std::size_t r0 = clampc(b.y0, im.height), r1 = clampc(b.y1 - 1, im.height);
  for (std::size_t c = c0; c <= c1; ++c) {
    im.put(r0, c, r, g, bl);
    im.put(r1, c, r, g, bl);
  }
  for (std::size_t y = r0; y <= r1; ++y) {
    im.put(y, c0, r, g, bl);
    im.put(y, c1, r, g, bl);
  }
}

}  // namespace

void Rgb::put(std::size_t r, std::size_t c, std::uint8_t red, std::uint8_t green, std::uint8_t blue) {
  auto* p = &pixels[3 * (r * width + c)];
  p[0] = red;
  p[1] = green;
  p[2] = blue;
}

void write_pgm(const std::filesystem::path& path, const Array& gray, bool already_unit) {
  if (gray.rank() != 2) throw std::invalid_argument("write_pgm expects an (H,W) array");
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary);
  if (!out) throw DataError("cannot write " + path.string());
  out << "P5\n" << gray.dim(1) << ' ' << gray.dim(0) << "\n255\n";
  double mn = 0.0, mx = 1.0;
  if (!already_unit && !gray.empty()) {
    auto [a, b] = std::minmax_element(gray.storage().begin(), gray.storage().end());
    mn = *a;
    mx = *b;
  }
  const double span = mx > mn ? mx - mn : 1.0;
  std::vector<std::uint8_t> bytes(gray.size());
  for (std::size_t i = 0; i < gray.size(); ++i) bytes[i] = to_byte((gray[i] - mn) / span);
  out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
}

void write_ppm(const std::filesystem::path& path, const Rgb& image) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary);
  if (!out) throw DataError("cannot write " + path.string());
  out << "P6\n" << image.width << ' ' << image.height << "\n255\n";
  out.write(reinterpret_cast<const char*>(image.pixels.data()),
            static_cast<std::streamsize>(image.pixels.size()));
}

Rgb overlay(const Array& image, std::span<const loc::Box> ground_truth, const loc::Box& predicted) {
  Rgb im(image.dim(0), image.dim(1));
  for (std::size_t r = 0; r < im.height; ++r) {
    for (std::size_t c = 0; c < im.width; ++c) {
      auto v = to_byte(image.at(r, c));
      im.put(r, c, v, v, v);
    }
  }
  for (const auto& g : ground_truth) draw_rect(im, g, 255, 0, 0);
  draw_rect(im, predicted, 0, 255, 0);
  return im;
}

Rgb heat_overlay(const Array& image, const Array& map) {
  Array up = loc::bilinear_resize(map, image.dim(0), image.dim(1));
  auto [a, b] = std::minmax_element(up.storage().begin(), up.storage().end());
  const double mn = *a, span = *b > *a ? *b - *a : 1.0;
  Rgb im(image.dim(0), image.dim(1));
  for (std::size_t r = 0; r < im.height; ++r) {
    for (std::size_t c = 0; c < im.width; ++c) {
      double heat = (up.at(r, c) - mn) / span;
      double base = image.at(r, c);
      im.put(r, c, to_byte(0.5 * base + 0.5 * heat), to_byte(0.5 * base),
             to_byte(0.5 * base + 0.5 * (1.0 - heat)));
    }
  }
  return im;
}

}  // namespace infocam::img
