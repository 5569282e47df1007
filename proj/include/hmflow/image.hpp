#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "hmflow/errors.hpp"

namespace hmflow {

/// 8-bit interleaved raster, row-major. channels is 1 (gray) or 3 (RGB).
struct Image {
  int width = 0;
  int height = 0;
  int channels = 0;
  std::vector<std::uint8_t> data;

  Image() = default;
  Image(int w, int h, int c)
      : width(w), height(h), channels(c),
        data(static_cast<std::size_t>(w) * h * c, 0) {
    if (w <= 0 || h <= 0 || (c != 1 && c != 3))
      throw ShapeError("Image: bad dimensions " + std::to_string(w) + "x" +
                       std::to_string(h) + "x" + std::to_string(c));
  }

  std::uint8_t& at(int y, int x, int c) {
    return data[(static_cast<std::size_t>(y) * width + x) * channels + c];
  }
  std::uint8_t at(int y, int x, int c) const {
    return data[(static_cast<std::size_t>(y) * width + x) * channels + c];
  }
};

/// Reads a PNG from disk, always expanded to RGB.
Image read_png(const std::string& path);

/// Writes an Image (gray or RGB) as PNG.
void write_png(const Image& img, const std::string& path);

}  // namespace hmflow
