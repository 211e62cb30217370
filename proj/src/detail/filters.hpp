#pragma once

#include "serialreg/geometry.hpp"

#include <algorithm>
#include <cmath>
#include <vector>

namespace serialreg::detail {

/// Separable Gaussian blur with clamp-to-edge borders. sigma <= 0 is a copy.
inline ImageGrid gaussian_smooth(const ImageGrid &img, double sigma) {
  if (sigma <= 0.0) return img;
  const int radius = std::max(1, static_cast<int>(std::ceil(3.0 * sigma)));
  std::vector<float> kernel(2 * radius + 1);
  double sum = 0.0;
  for (int i = -radius; i <= radius; ++i) {
    const double v = std::exp(-0.5 * (i * i) / (sigma * sigma));
    kernel[i + radius] = static_cast<float>(v);
    sum += v;
  }
  for (auto &k : kernel) k = static_cast<float>(k / sum);

  const int w = img.width, h = img.height;
  ImageGrid tmp = make_image(w, h, img.spacing_um);
  for (int y = 0; y < h; ++y) {
    for (int x = 0; x < w; ++x) {
      float acc = 0.0f;
      for (int i = -radius; i <= radius; ++i) {
        const int xx = std::clamp(x + i, 0, w - 1);
        acc += kernel[i + radius] * img.at(xx, y);
      }
      tmp.at(x, y) = acc;
    }
  }
  ImageGrid out = make_image(w, h, img.spacing_um);
  for (int y = 0; y < h; ++y) {
    for (int x = 0; x < w; ++x) {
      float acc = 0.0f;
      for (int i = -radius; i <= radius; ++i) {
        const int yy = std::clamp(y + i, 0, h - 1);
        acc += kernel[i + radius] * tmp.at(x, yy);
      }
      out.at(x, y) = std::clamp(acc, 0.0f, 1.0f);
    }
  }
  return out;
}

/// Keep every second sample (0, 2, 4, ...); caller smooths first. Doubles the
/// pixel spacing. Output dims are ceil(dim / 2).
inline ImageGrid downsample_half(const ImageGrid &img) {
  ImageGrid out = make_image((img.width + 1) / 2, (img.height + 1) / 2,
                             img.spacing_um * 2.0);
  for (int y = 0; y < out.height; ++y) {
    for (int x = 0; x < out.width; ++x) {
      out.at(x, y) = img.at(std::min(2 * x, img.width - 1),
                            std::min(2 * y, img.height - 1));
    }
  }
  return out;
}

/// Resize to exact target dims sampling input coordinate x_out * factor
/// (top-left aligned). Caller is responsible for anti-alias smoothing.
inline ImageGrid resize_sampled(const ImageGrid &img, int new_w, int new_h,
                                double factor_x, double factor_y,
                                double new_spacing) {
  ImageGrid out = make_image(new_w, new_h, new_spacing);
  for (int y = 0; y < new_h; ++y) {
    for (int x = 0; x < new_w; ++x) {
      const double sx = std::min(x * factor_x, static_cast<double>(img.width - 1));
      const double sy = std::min(y * factor_y, static_cast<double>(img.height - 1));
      out.at(x, y) = std::clamp(sample_bilinear(img, sx, sy, 0.0f), 0.0f, 1.0f);
    }
  }
  return out;
}

} // namespace serialreg::detail
