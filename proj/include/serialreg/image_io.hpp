#pragma once

#include "serialreg/geometry.hpp"

#include <array>
#include <string>
#include <vector>

namespace serialreg {

/// Interleaved RGB, values in [0,1].
struct RgbImage {
  int width = 0;
  int height = 0;
  std::vector<float> data; // 3 * width * height

  std::size_t index(int x, int y) const {
    return 3 * (static_cast<std::size_t>(y) * width + x);
  }
  std::array<float, 3> pixel(int x, int y) const {
    const std::size_t i = index(x, y);
    return {data[i], data[i + 1], data[i + 2]};
  }
  void set_pixel(int x, int y, float r, float g, float b) {
    const std::size_t i = index(x, y);
    data[i] = r;
    data[i + 1] = g;
    data[i + 2] = b;
  }
};

RgbImage make_rgb(int width, int height, float r = 0, float g = 0, float b = 0);
RgbImage to_rgb(const ImageGrid &gray);

RgbImage load_rgb(const std::string &path);           // throws DecodeError
void save_rgb_png(const RgbImage &img, const std::string &path);
void save_gray_png(const ImageGrid &img, const std::string &path);

/// True if the file starts with a PNG/JPEG/TIFF/BMP signature.
bool sniff_raster_magic(const std::string &path);

} // namespace serialreg
