#include "serialreg/features.hpp"

#include "serialreg/image_io.hpp"

#include "detail/filters.hpp"
#include "detail/rng.hpp"

#include <json.hpp>

#include <algorithm>
#include <cmath>
#include <fstream>
#include <limits>

namespace serialreg {

namespace {

constexpr double kHarrisK = 0.04;
constexpr double kSmoothSigma = 1.0;  // pre-detection smoothing
constexpr double kTensorSigma = 2.0;  // structure tensor window
constexpr int kNmsRadius = 5;
constexpr int kPatchGrid = 8;       // descriptor grid
constexpr double kPatchStep = 4.0;  // descriptor sample spacing in px

std::vector<float> harris_response(const ImageGrid &smoothed) {
  const int w = smoothed.width, h = smoothed.height;
  ImageGrid ixx = make_image(w, h), iyy = make_image(w, h), ixy = make_image(w, h);
  for (int y = 0; y < h; ++y) {
    for (int x = 0; x < w; ++x) {
      const int xm = x > 0 ? x - 1 : 0, xp = x < w - 1 ? x + 1 : w - 1;
      const int ym = y > 0 ? y - 1 : 0, yp = y < h - 1 ? y + 1 : h - 1;
      const float gx = 0.5f * (smoothed.at(xp, y) - smoothed.at(xm, y));
      const float gy = 0.5f * (smoothed.at(x, yp) - smoothed.at(x, ym));
      // tensor products of [0,1]-image gradients fit in [0,1]; the mixed term
      // is stored offset by 0.5 so the smoothing helper can be reused
      ixx.at(x, y) = gx * gx;
      iyy.at(x, y) = gy * gy;
      ixy.at(x, y) = gx * gy * 0.5f + 0.5f;
    }
  }
  ixx = detail::gaussian_smooth(ixx, kTensorSigma);
  iyy = detail::gaussian_smooth(iyy, kTensorSigma);
  ixy = detail::gaussian_smooth(ixy, kTensorSigma);
  std::vector<float> r(static_cast<std::size_t>(w) * h);
  for (std::size_t i = 0; i < r.size(); ++i) {
    const double a = ixx.data[i];
    const double d = iyy.data[i];
    const double b = (static_cast<double>(ixy.data[i]) - 0.5) * 2.0;
    r[i] = static_cast<float>(a * d - b * b - kHarrisK * (a + d) * (a + d));
  }
  return r;
}

bool is_local_max(const std::vector<float> &r, int w, int h, int x, int y) {
  const float v = r[static_cast<std::size_t>(y) * w + x];
  for (int dy = -kNmsRadius; dy <= kNmsRadius; ++dy) {
    const int yy = y + dy;
    if (yy < 0 || yy >= h) continue;
    for (int dx = -kNmsRadius; dx <= kNmsRadius; ++dx) {
      if (dx * dx + dy * dy > kNmsRadius * kNmsRadius) continue;
      const int xx = x + dx;
      if (xx < 0 || xx >= w || (dx == 0 && dy == 0)) continue;
      const float q = r[static_cast<std::size_t>(yy) * w + xx];
      if (q > v) return false;
      // ties go to the earlier pixel in raster order
      if (q == v && (yy < y || (yy == y && xx < x))) return false;
    }
  }
  return true;
}

std::vector<float> patch_descriptor(const ImageGrid &img, double px, double py) {
  std::vector<float> d(kPatchGrid * kPatchGrid);
  double mean = 0.0;
  for (int j = 0; j < kPatchGrid; ++j) {
    for (int i = 0; i < kPatchGrid; ++i) {
      const double sx =
          std::clamp(px + (i - (kPatchGrid - 1) * 0.5) * kPatchStep, 0.0,
                     static_cast<double>(img.width - 1));
      const double sy =
          std::clamp(py + (j - (kPatchGrid - 1) * 0.5) * kPatchStep, 0.0,
                     static_cast<double>(img.height - 1));
      const float v = sample_bilinear(img, sx, sy, 0.0f);
      d[static_cast<std::size_t>(j) * kPatchGrid + i] = v;
      mean += v;
    }
  }
  mean /= d.size();
  double norm2 = 0.0;
  for (auto &v : d) {
    v = static_cast<float>(v - mean);
    norm2 += static_cast<double>(v) * v;
  }
  const double norm = std::sqrt(norm2);
  if (norm < 1e-9) return {}; // flat patch, caller drops the keypoint
  for (auto &v : d) v = static_cast<float>(v / norm);
  return d;
}

double descriptor_dist2(const std::vector<float> &a,
                        const std::vector<float> &b) {
  double s = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    const double d = static_cast<double>(a[i]) - b[i];
    s += d * d;
  }
  return s;
}

Point2D match_point_a(const std::vector<Keypoint> &a, const Match &m) {
  return a[m.index_a].position;
}
Point2D match_point_b(const std::vector<Keypoint> &b, const Match &m) {
  return b[m.index_b].position;
}

// Exact affine through 3 correspondences; false when the source triangle is
// (near-)degenerate.
bool affine_from_three(const Point2D *src, const Point2D *dst, Affine2D &out) {
  const double ax = src[1].x - src[0].x, ay = src[1].y - src[0].y;
  const double bx = src[2].x - src[0].x, by = src[2].y - src[0].y;
  const double det = ax * by - ay * bx;
  const double scale2 = (ax * ax + ay * ay + bx * bx + by * by) * 0.5;
  if (std::abs(det) < 1e-9 * std::max(scale2, 1.0)) return false;
  const double inv = 1.0 / det;
  // solve for the linear block column by column
  const double ux = dst[1].x - dst[0].x, uy = dst[1].y - dst[0].y;
  const double vx = dst[2].x - dst[0].x, vy = dst[2].y - dst[0].y;
  const double m00 = (ux * by - vx * ay) * inv;
  const double m01 = (vx * ax - ux * bx) * inv;
  const double m10 = (uy * by - vy * ay) * inv;
  const double m11 = (vy * ax - uy * bx) * inv;
  out = Affine2D::from_coeffs(m00, m01, dst[0].x - m00 * src[0].x - m01 * src[0].y,
                              m10, m11, dst[0].y - m10 * src[0].x - m11 * src[0].y);
  return true;
}

struct RansacInternal {
  bool ok = false;
  Affine2D transform;
  std::vector<std::uint8_t> inlier_mask;
  int inlier_count = 0;
  int best_sample_count = 0;
  double mean_inlier_error = 0.0;
};

RansacInternal ransac_core(const std::vector<Keypoint> &a,
                           const std::vector<Keypoint> &b,
                           const MatchSet &matches, const FeatureConfig &cfg) {
  RansacInternal out;
  const std::size_t n = matches.pairs.size();
  std::vector<Point2D> pa(n), pb(n);
  for (std::size_t i = 0; i < n; ++i) {
    pa[i] = match_point_a(a, matches.pairs[i]);
    pb[i] = match_point_b(b, matches.pairs[i]);
  }
  const double tol2 = cfg.inlier_tolerance_px * cfg.inlier_tolerance_px;

  auto count_inliers = [&](const Affine2D &t, std::vector<std::uint8_t> *mask,
                           double *err_sum) {
    int count = 0;
    double errs = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
      const Point2D q = apply_point(t, pa[i]);
      const double dx = q.x - pb[i].x, dy = q.y - pb[i].y;
      const double e2 = dx * dx + dy * dy;
      const bool in = e2 <= tol2;
      if (mask) (*mask)[i] = in ? 1 : 0;
      if (in) {
        ++count;
        errs += std::sqrt(e2);
      }
    }
    if (err_sum) *err_sum = errs;
    return count;
  };

  detail::Rng rng(cfg.seed);
  Affine2D best;
  int best_count = 0;
  double best_err = std::numeric_limits<double>::max();
  for (int it = 0; it < cfg.ransac_iterations; ++it) {
    std::uint32_t i0 = rng.below(static_cast<std::uint32_t>(n));
    std::uint32_t i1 = i0, i2 = i0;
    while (i1 == i0) i1 = rng.below(static_cast<std::uint32_t>(n));
    while (i2 == i0 || i2 == i1) i2 = rng.below(static_cast<std::uint32_t>(n));
    const Point2D src[3] = {pa[i0], pa[i1], pa[i2]};
    const Point2D dst[3] = {pb[i0], pb[i1], pb[i2]};
    Affine2D t;
    if (!affine_from_three(src, dst, t)) continue;
    double err_sum = 0.0;
    const int count = count_inliers(t, nullptr, &err_sum);
    if (count > best_count || (count == best_count && err_sum < best_err)) {
      best = t;
      best_count = count;
      best_err = err_sum;
    }
  }
  out.best_sample_count = best_count;
  if (best_count < std::max(3, cfg.min_inliers)) return out;

  // least-squares refit on the consensus set, re-deciding inliers under the
  // refit until the mask settles
  std::vector<std::uint8_t> mask(n, 0);
  count_inliers(best, &mask, nullptr);
  Affine2D model = best;
  for (int round = 0; round < 3; ++round) {
    std::vector<Point2D> src, dst;
    for (std::size_t i = 0; i < n; ++i) {
      if (mask[i]) {
        src.push_back(pa[i]);
        dst.push_back(pb[i]);
      }
    }
    if (src.size() < 3) break;
    Affine2D refit;
    try {
      refit = fit_affine_least_squares(src, dst);
    } catch (const Error &) {
      break;
    }
    std::vector<std::uint8_t> new_mask(n, 0);
    count_inliers(refit, &new_mask, nullptr);
    model = refit;
    const bool stable = new_mask == mask;
    mask = std::move(new_mask);
    if (stable) break;
  }

  double err_sum = 0.0;
  const int final_count = count_inliers(model, &mask, &err_sum);
  if (final_count < std::max(3, cfg.min_inliers)) {
    out.best_sample_count = std::max(out.best_sample_count, final_count);
    return out;
  }
  out.ok = true;
  out.transform = model;
  out.inlier_mask = std::move(mask);
  out.inlier_count = final_count;
  out.mean_inlier_error = final_count > 0 ? err_sum / final_count : 0.0;
  return out;
}

} // namespace

std::vector<Keypoint> detect_keypoints(const ImageGrid &image,
                                       const FeatureConfig &cfg) {
  if (image.pixel_count() == 0) throw Error("detect_keypoints: empty image");
  const ImageGrid smoothed = detail::gaussian_smooth(image, kSmoothSigma);
  const std::vector<float> response = harris_response(smoothed);
  const int w = image.width, h = image.height;

  float rmax = 0.0f;
  for (float v : response) rmax = std::max(rmax, v);
  if (rmax <= 0.0f) return {};
  const float threshold = static_cast<float>(cfg.detection_threshold) * rmax;

  struct Candidate {
    int x, y;
    float r;
  };
  std::vector<Candidate> candidates;
  for (int y = 0; y < h; ++y) {
    for (int x = 0; x < w; ++x) {
      const float v = response[static_cast<std::size_t>(y) * w + x];
      if (v < threshold || v <= 0.0f) continue;
      if (is_local_max(response, w, h, x, y)) candidates.push_back({x, y, v});
    }
  }
  std::sort(candidates.begin(), candidates.end(),
            [](const Candidate &l, const Candidate &r) {
              if (l.r != r.r) return l.r > r.r;
              if (l.y != r.y) return l.y < r.y;
              return l.x < r.x;
            });
  if (static_cast<int>(candidates.size()) > cfg.max_keypoints) {
    candidates.resize(cfg.max_keypoints);
  }

  std::vector<Keypoint> keypoints;
  keypoints.reserve(candidates.size());
  for (const auto &c : candidates) {
    auto desc = patch_descriptor(smoothed, c.x, c.y);
    if (desc.empty()) continue;
    Keypoint kp;
    kp.position = {static_cast<double>(c.x), static_cast<double>(c.y)};
    kp.response = c.r;
    kp.descriptor = std::move(desc);
    keypoints.push_back(std::move(kp));
  }
  return keypoints;
}

MatchSet match_keypoints(const std::vector<Keypoint> &a,
                         const std::vector<Keypoint> &b,
                         const FeatureConfig &cfg) {
  MatchSet out;
  if (a.empty() || b.empty()) return out;
  const std::size_t len = a[0].descriptor.size();
  for (const auto &kp : a) {
    if (kp.descriptor.size() != len)
      throw DescriptorLengthMismatch("descriptor lengths differ within list a");
  }
  for (const auto &kp : b) {
    if (kp.descriptor.size() != len)
      throw DescriptorLengthMismatch("descriptor lengths differ between lists");
  }

  const std::size_t na = a.size(), nb = b.size();
  std::vector<int> best_b(na, -1);
  std::vector<double> best_d2(na, 0.0), second_d2(na, 0.0);
  for (std::size_t i = 0; i < na; ++i) {
    double d1 = std::numeric_limits<double>::max();
    double d2 = std::numeric_limits<double>::max();
    int arg = -1;
    for (std::size_t j = 0; j < nb; ++j) {
      const double d = descriptor_dist2(a[i].descriptor, b[j].descriptor);
      if (d < d1) {
        d2 = d1;
        d1 = d;
        arg = static_cast<int>(j);
      } else if (d < d2) {
        d2 = d;
      }
    }
    best_b[i] = arg;
    best_d2[i] = d1;
    second_d2[i] = d2;
  }
  std::vector<int> best_a(nb, -1);
  for (std::size_t j = 0; j < nb; ++j) {
    double d1 = std::numeric_limits<double>::max();
    int arg = -1;
    for (std::size_t i = 0; i < na; ++i) {
      const double d = descriptor_dist2(a[i].descriptor, b[j].descriptor);
      if (d < d1) {
        d1 = d;
        arg = static_cast<int>(i);
      }
    }
    best_a[j] = arg;
  }

  const double ratio2 = cfg.ratio_test * cfg.ratio_test;
  for (std::size_t i = 0; i < na; ++i) {
    const int j = best_b[i];
    if (j < 0 || best_a[j] != static_cast<int>(i)) continue;
    // Lowe ratio on squared distances; trivially passes for exact duplicates
    if (second_d2[i] < std::numeric_limits<double>::max() &&
        best_d2[i] > 1e-12 && best_d2[i] > ratio2 * second_d2[i]) {
      continue;
    }
    const double dist = std::sqrt(best_d2[i]);
    out.pairs.push_back(
        {static_cast<int>(i), j, std::clamp(1.0 - dist / 2.0, 0.0, 1.0)});
  }
  return out;
}

RansacResult estimate_affine_ransac(const std::vector<Keypoint> &a,
                                    const std::vector<Keypoint> &b,
                                    const MatchSet &matches,
                                    const FeatureConfig &cfg) {
  if (matches.pairs.size() < 3) {
    throw InsufficientMatches("RANSAC needs at least 3 matches, got " +
                              std::to_string(matches.pairs.size()));
  }
  RansacInternal core = ransac_core(a, b, matches, cfg);
  if (!core.ok) {
    throw NoConsensus("best inlier count " +
                      std::to_string(core.best_sample_count) +
                      " is below min_inliers " + std::to_string(cfg.min_inliers));
  }
  RansacResult out;
  out.transform = core.transform;
  out.matches = matches;
  out.matches.inlier_mask = core.inlier_mask;
  out.inlier_count = core.inlier_count;
  out.mean_inlier_error_px = core.mean_inlier_error;
  return out;
}

Stage1Result register_pair_features(const ImageGrid &fixed,
                                    const ImageGrid &moving,
                                    const FeatureConfig &cfg) {
  Stage1Result result;
  result.keypoints_fixed = detect_keypoints(fixed, cfg);
  result.keypoints_moving = detect_keypoints(moving, cfg);
  result.diagnostics.keypoints_fixed =
      static_cast<int>(result.keypoints_fixed.size());
  result.diagnostics.keypoints_moving =
      static_cast<int>(result.keypoints_moving.size());

  MatchSet matches;
  try {
    matches = match_keypoints(result.keypoints_moving, result.keypoints_fixed, cfg);
  } catch (const DescriptorLengthMismatch &e) {
    throw Stage1Failure(std::string("matching failed: ") + e.what(),
                        result.diagnostics);
  }
  result.diagnostics.match_count = static_cast<int>(matches.pairs.size());
  if (matches.pairs.size() < 3) {
    throw Stage1Failure("too few matches for an affine estimate (" +
                            std::to_string(matches.pairs.size()) + ")",
                        result.diagnostics);
  }

  RansacInternal core =
      ransac_core(result.keypoints_moving, result.keypoints_fixed, matches, cfg);
  result.diagnostics.best_inlier_count =
      core.ok ? core.inlier_count : core.best_sample_count;
  if (!core.ok) {
    throw Stage1Failure("no RANSAC consensus (best inlier count " +
                            std::to_string(core.best_sample_count) + ")",
                        result.diagnostics);
  }
  result.transform = core.transform;
  result.matches = matches;
  result.matches.inlier_mask = core.inlier_mask;
  return result;
}

namespace {

void draw_line(RgbImage &img, Point2D a, Point2D b, float r, float g, float bl) {
  const double steps = std::max(std::abs(b.x - a.x), std::abs(b.y - a.y));
  const int n = std::max(1, static_cast<int>(steps));
  for (int i = 0; i <= n; ++i) {
    const double t = static_cast<double>(i) / n;
    const int x = static_cast<int>(std::lround(a.x + t * (b.x - a.x)));
    const int y = static_cast<int>(std::lround(a.y + t * (b.y - a.y)));
    if (x >= 0 && y >= 0 && x < img.width && y < img.height) {
      img.set_pixel(x, y, r, g, bl);
    }
  }
}

} // namespace

void dump_stage1_diagnostics(const ImageGrid &fixed, const ImageGrid &moving,
                             const Stage1Result &result,
                             const std::string &output_prefix) {
  // side-by-side canvas: fixed left, moving right
  const int gap = 8;
  RgbImage canvas = make_rgb(fixed.width + gap + moving.width,
                             std::max(fixed.height, moving.height), 0.1f, 0.1f, 0.1f);
  for (int y = 0; y < fixed.height; ++y) {
    for (int x = 0; x < fixed.width; ++x) {
      const float v = fixed.at(x, y);
      canvas.set_pixel(x, y, v, v, v);
    }
  }
  const int off = fixed.width + gap;
  for (int y = 0; y < moving.height; ++y) {
    for (int x = 0; x < moving.width; ++x) {
      const float v = moving.at(x, y);
      canvas.set_pixel(off + x, y, v, v, v);
    }
  }

  std::vector<double> residuals;
  for (std::size_t i = 0; i < result.matches.pairs.size(); ++i) {
    const auto &m = result.matches.pairs[i];
    const Point2D pm = result.keypoints_moving[m.index_a].position;
    const Point2D pf = result.keypoints_fixed[m.index_b].position;
    const bool inlier =
        !result.matches.inlier_mask.empty() && result.matches.inlier_mask[i];
    if (inlier) {
      const Point2D proj = apply_point(result.transform, pm);
      residuals.push_back(std::hypot(proj.x - pf.x, proj.y - pf.y));
    }
    draw_line(canvas, pf, {pm.x + off, pm.y}, inlier ? 0.1f : 0.8f,
              inlier ? 0.9f : 0.15f, 0.1f);
  }
  save_rgb_png(canvas, output_prefix + ".png");

  double residual_sum = 0;
  for (double r : residuals) residual_sum += r;
  nlohmann::json j{
      {"keypoints_fixed", result.diagnostics.keypoints_fixed},
      {"keypoints_moving", result.diagnostics.keypoints_moving},
      {"match_count", result.diagnostics.match_count},
      {"inlier_count", result.diagnostics.best_inlier_count},
      {"mean_inlier_residual_px",
       residuals.empty() ? 0.0 : residual_sum / residuals.size()},
      {"residuals_px", residuals}};
  std::ofstream out(output_prefix + ".json");
  if (!out) throw WriteError("cannot write " + output_prefix + ".json");
  out << j.dump(2) << "\n";
}

} // namespace serialreg
