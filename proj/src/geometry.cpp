#include "serialreg/geometry.hpp"

#include <Eigen/Dense>

#include <cmath>
#include <limits>

namespace serialreg {

Affine2D Affine2D::translation(double tx, double ty) {
  return from_coeffs(1, 0, tx, 0, 1, ty);
}

Affine2D Affine2D::rotation(double radians) {
  const double c = std::cos(radians);
  const double s = std::sin(radians);
  return from_coeffs(c, -s, 0, s, c, 0);
}

Affine2D Affine2D::rotation_about(double radians, double cx, double cy) {
  const double c = std::cos(radians);
  const double s = std::sin(radians);
  return from_coeffs(c, -s, cx - c * cx + s * cy, s, c, cy - s * cx - c * cy);
}

Affine2D Affine2D::scaling(double sx, double sy) {
  return from_coeffs(sx, 0, 0, 0, sy, 0);
}

Affine2D Affine2D::from_coeffs(double a, double b, double tx, double c,
                               double d, double ty) {
  Affine2D out;
  out.m = {a, b, tx, c, d, ty, 0, 0, 1};
  return out;
}

bool Affine2D::finite() const {
  for (double v : m) {
    if (!std::isfinite(v)) return false;
  }
  return true;
}

Affine2D compose(const Affine2D &first, const Affine2D &second) {
  const auto &f = first.m;
  const auto &s = second.m;
  // second * first; bottom row stays exactly (0, 0, 1)
  return Affine2D::from_coeffs(
      s[0] * f[0] + s[1] * f[3], s[0] * f[1] + s[1] * f[4],
      s[0] * f[2] + s[1] * f[5] + s[2], s[3] * f[0] + s[4] * f[3],
      s[3] * f[1] + s[4] * f[4], s[3] * f[2] + s[4] * f[5] + s[5]);
}

Affine2D invert(const Affine2D &a, double singularity_threshold) {
  const double det = a.det();
  if (!std::isfinite(det) || std::abs(det) < singularity_threshold) {
    throw SingularTransform("affine linear block is singular (|det| = " +
                            std::to_string(std::abs(det)) + ")");
  }
  const double inv_det = 1.0 / det;
  const double ia = a.m[4] * inv_det;
  const double ib = -a.m[1] * inv_det;
  const double ic = -a.m[3] * inv_det;
  const double id = a.m[0] * inv_det;
  return Affine2D::from_coeffs(ia, ib, -(ia * a.m[2] + ib * a.m[5]), ic, id,
                               -(ic * a.m[2] + id * a.m[5]));
}

Point2D apply_point(const Affine2D &a, const Point2D &p) {
  return {a.m[0] * p.x + a.m[1] * p.y + a.m[2],
          a.m[3] * p.x + a.m[4] * p.y + a.m[5]};
}

nlohmann::json affine_to_json(const Affine2D &a) {
  return nlohmann::json(a.m);
}

Affine2D affine_from_json(const nlohmann::json &j) {
  if (!j.is_array() || j.size() != 9) {
    throw ParseError("affine transform must be a row-major 9-element array");
  }
  Affine2D a;
  for (int i = 0; i < 9; ++i) a.m[i] = j[i].get<double>();
  if (a.m[6] != 0.0 || a.m[7] != 0.0 || a.m[8] != 1.0) {
    throw ParseError("affine bottom row must be (0, 0, 1)");
  }
  if (!a.finite()) throw ParseError("affine entries must be finite");
  return a;
}

ImageGrid make_image(int width, int height, double spacing_um, float fill) {
  if (width < 0 || height < 0) throw Error("image dimensions must be non-negative");
  ImageGrid img;
  img.width = width;
  img.height = height;
  img.spacing_um = spacing_um;
  img.data.assign(static_cast<std::size_t>(width) * height, fill);
  return img;
}

void validate_image(const ImageGrid &img) {
  if (img.width <= 0 || img.height <= 0) {
    throw Error("ImageGrid dimensions must be positive");
  }
  if (img.data.size() != static_cast<std::size_t>(img.width) * img.height) {
    throw Error("ImageGrid data length does not match width * height");
  }
  if (!(img.spacing_um > 0.0)) {
    throw Error("ImageGrid spacing_um must be positive");
  }
  for (float v : img.data) {
    if (!(v >= 0.0f && v <= 1.0f)) {
      throw Error("ImageGrid intensities must lie in [0, 1]");
    }
  }
}

float sample_bilinear(const ImageGrid &img, double x, double y, float fill) {
  if (x < 0.0 || y < 0.0 || x > img.width - 1 || y > img.height - 1) {
    return fill;
  }
  int x0 = static_cast<int>(x);
  int y0 = static_cast<int>(y);
  if (x0 == img.width - 1) x0 = img.width - 2 >= 0 ? img.width - 2 : 0;
  if (y0 == img.height - 1) y0 = img.height - 2 >= 0 ? img.height - 2 : 0;
  const int x1 = x0 + 1 < img.width ? x0 + 1 : x0;
  const int y1 = y0 + 1 < img.height ? y0 + 1 : y0;
  const double fx = x - x0;
  const double fy = y - y0;
  const double v00 = img.at(x0, y0);
  const double v10 = img.at(x1, y0);
  const double v01 = img.at(x0, y1);
  const double v11 = img.at(x1, y1);
  const double top = v00 + fx * (v10 - v00);
  const double bot = v01 + fx * (v11 - v01);
  return static_cast<float>(top + fy * (bot - top));
}

ImageGrid warp_image(const Affine2D &a, const ImageGrid &moving,
                     int target_width, int target_height, float fill) {
  return warp_image_masked(a, moving, target_width, target_height, fill).image;
}

WarpedImage warp_image_masked(const Affine2D &a, const ImageGrid &moving,
                              int target_width, int target_height,
                              float fill) {
  if (target_width <= 0 || target_height <= 0) {
    throw Error("warp_image target shape must be positive");
  }
  const Affine2D inv = invert(a);
  WarpedImage out;
  out.image = make_image(target_width, target_height, moving.spacing_um, fill);
  out.valid.assign(static_cast<std::size_t>(target_width) * target_height, 0);
  const double xmax = moving.width - 1;
  const double ymax = moving.height - 1;
  for (int y = 0; y < target_height; ++y) {
    // row start plus per-column increments of the inverse map
    double sx = inv.m[1] * y + inv.m[2];
    double sy = inv.m[4] * y + inv.m[5];
    std::size_t idx = static_cast<std::size_t>(y) * target_width;
    for (int x = 0; x < target_width; ++x, ++idx, sx += inv.m[0],
             sy += inv.m[3]) {
      if (sx >= 0.0 && sy >= 0.0 && sx <= xmax && sy <= ymax) {
        out.image.data[idx] = sample_bilinear(moving, sx, sy, fill);
        out.valid[idx] = 1;
      }
    }
  }
  return out;
}

Affine2D fit_affine_least_squares(const std::vector<Point2D> &src,
                                  const std::vector<Point2D> &dst,
                                  double condition_cap) {
  if (src.size() != dst.size()) {
    throw InsufficientPoints("src and dst point counts differ");
  }
  const std::size_t n = src.size();
  if (n < 3) {
    throw InsufficientPoints("affine fit needs at least 3 point pairs, got " +
                             std::to_string(n));
  }
  Eigen::MatrixXd design(n, 3);
  Eigen::MatrixXd rhs(n, 2);
  for (std::size_t i = 0; i < n; ++i) {
    design(i, 0) = src[i].x;
    design(i, 1) = src[i].y;
    design(i, 2) = 1.0;
    rhs(i, 0) = dst[i].x;
    rhs(i, 1) = dst[i].y;
  }
  Eigen::JacobiSVD<Eigen::MatrixXd> svd(design,
                                        Eigen::ComputeThinU | Eigen::ComputeThinV);
  const auto &sv = svd.singularValues();
  const double smax = sv(0);
  const double smin = sv(sv.size() - 1);
  // cond of the normal system A^T A is the squared condition of the design
  if (!(smin > 0.0) ||
      (smax / smin) * (smax / smin) > condition_cap) {
    throw DegenerateConfiguration(
        "source points are collinear or ill-conditioned for an affine fit");
  }
  Eigen::MatrixXd sol = svd.solve(rhs); // 3x2, columns are x' and y' rows
  return Affine2D::from_coeffs(sol(0, 0), sol(1, 0), sol(2, 0), sol(0, 1),
                               sol(1, 1), sol(2, 1));
}

} // namespace serialreg
