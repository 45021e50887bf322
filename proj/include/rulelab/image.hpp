#pragma once

#include <cstdint>
#include <filesystem>
#include <vector>

#include "rulelab/color.hpp"

namespace rulelab {

struct RasterImage {
  int width = 0;
  int height = 0;
  std::vector<std::uint8_t> rgb;  // row-major, 3 bytes per pixel

  RasterImage() = default;
  RasterImage(int w, int h, Rgb8 fill = kWhite);

  Rgb8 at(int row, int col) const {
    const std::uint8_t* p = &rgb[3 * (static_cast<std::size_t>(row) * width + col)];
    return {p[0], p[1], p[2]};
  }
  void set(int row, int col, Rgb8 c) {
    std::uint8_t* p = &rgb[3 * (static_cast<std::size_t>(row) * width + col)];
    p[0] = c.r;
    p[1] = c.g;
    p[2] = c.b;
  }
  bool operator==(const RasterImage&) const = default;
};

void write_png(const std::filesystem::path& path, const RasterImage& image);
// Any PNG color type is converted to RGB8; alpha is composited onto white.
RasterImage read_png(const std::filesystem::path& path);  // throws Error

RasterImage upscale_nearest(const RasterImage& image, int factor);

}  // namespace rulelab
