#pragma once

#include "serialreg/errors.hpp"

#include <json.hpp>

#include <array>
#include <cstdint>
#include <vector>

namespace serialreg {

struct Point2D {
  double x = 0.0;
  double y = 0.0;
};

/// Homogeneous 2D affine transform, row-major 3x3, bottom row always exactly
/// (0, 0, 1). Coordinates are pixels at the working resolution; pixel (i, j)
/// denotes a sample at continuous coordinate (i, j), so rescaling an image by
/// factor f maps coordinates x -> x / f with no offset.
struct Affine2D {
  std::array<double, 9> m{1, 0, 0, 0, 1, 0, 0, 0, 1};

  static Affine2D identity() { return {}; }
  static Affine2D translation(double tx, double ty);
  static Affine2D rotation(double radians);
  static Affine2D rotation_about(double radians, double cx, double cy);
  static Affine2D scaling(double sx, double sy);
  /// [a b tx; c d ty; 0 0 1]
  static Affine2D from_coeffs(double a, double b, double tx, double c,
                              double d, double ty);

  /// Determinant of the upper-left 2x2 linear block.
  double det() const { return m[0] * m[4] - m[1] * m[3]; }
  bool finite() const;
};

inline constexpr double kSingularityThreshold = 1e-8;

/// Transform equivalent to applying `first`, then `second`
/// (matrix product second * first).
Affine2D compose(const Affine2D &first, const Affine2D &second);

/// Throws SingularTransform when |det| of the linear block is below
/// `singularity_threshold`.
Affine2D invert(const Affine2D &a,
                double singularity_threshold = kSingularityThreshold);

Point2D apply_point(const Affine2D &a, const Point2D &p);

nlohmann::json affine_to_json(const Affine2D &a);
Affine2D affine_from_json(const nlohmann::json &j);

/// Single-channel image with intensities in [0,1] and isotropic pixel spacing
/// in microns. Row-major.
struct ImageGrid {
  int width = 0;
  int height = 0;
  double spacing_um = 1.0;
  std::vector<float> data;

  float at(int x, int y) const {
    return data[static_cast<std::size_t>(y) * width + x];
  }
  float &at(int x, int y) {
    return data[static_cast<std::size_t>(y) * width + x];
  }
  std::size_t pixel_count() const { return data.size(); }
};

ImageGrid make_image(int width, int height, double spacing_um = 1.0,
                     float fill = 0.0f);

/// Throws Error if the ImageGrid invariants are violated (size consistency,
/// intensities in [0,1], spacing > 0).
void validate_image(const ImageGrid &img);

/// Bilinear sample at a real coordinate. The sample is valid iff it lies in
/// [0, w-1] x [0, h-1]; outside, `fill` is returned.
float sample_bilinear(const ImageGrid &img, double x, double y, float fill);

/// Resample `moving` so that output pixel (x, y) takes the value of `moving`
/// at invert(a) * (x, y). Out-of-bounds samples get `fill`.
ImageGrid warp_image(const Affine2D &a, const ImageGrid &moving,
                     int target_width, int target_height, float fill = 0.0f);

struct WarpedImage {
  ImageGrid image;
  std::vector<std::uint8_t> valid; // 1 where the source sample was in bounds
};

/// Same as warp_image but also reports which output pixels sampled inside the
/// moving image (the overlap region used by the intensity metrics).
WarpedImage warp_image_masked(const Affine2D &a, const ImageGrid &moving,
                              int target_width, int target_height,
                              float fill = 0.0f);

/// Least-squares affine fit mapping src[i] -> dst[i].
/// Throws InsufficientPoints (< 3 pairs) or DegenerateConfiguration when the
/// normal system's condition number exceeds `condition_cap`.
Affine2D fit_affine_least_squares(const std::vector<Point2D> &src,
                                  const std::vector<Point2D> &dst,
                                  double condition_cap = 1e10);

} // namespace serialreg
