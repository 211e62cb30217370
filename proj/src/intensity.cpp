#include "serialreg/intensity.hpp"

#include "detail/filters.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

namespace serialreg {

namespace {

constexpr double kRejected = -std::numeric_limits<double>::infinity();

inline int bin_of(float v, int bins) {
  int b = static_cast<int>(v * bins);
  return b >= bins ? bins - 1 : (b < 0 ? 0 : b);
}

void check_shapes(const ImageGrid &a, const ImageGrid &b,
                  const std::vector<std::uint8_t> &mask) {
  if (a.width != b.width || a.height != b.height) {
    throw ShapeMismatch("images have different shapes");
  }
  if (!mask.empty() && mask.size() != a.pixel_count()) {
    throw ShapeMismatch("overlap mask length does not match image size");
  }
}

double mi_from_joint(const std::vector<double> &joint, int bins_a, int bins_b,
                     double n) {
  std::vector<double> pa(bins_a, 0.0), pb(bins_b, 0.0);
  for (int i = 0; i < bins_a; ++i) {
    for (int j = 0; j < bins_b; ++j) {
      const double c = joint[static_cast<std::size_t>(i) * bins_b + j];
      pa[i] += c;
      pb[j] += c;
    }
  }
  double mi = 0.0;
  for (int i = 0; i < bins_a; ++i) {
    if (pa[i] <= 0.0) continue;
    for (int j = 0; j < bins_b; ++j) {
      const double c = joint[static_cast<std::size_t>(i) * bins_b + j];
      if (c <= 0.0) continue;
      mi += (c / n) * std::log(c * n / (pa[i] * pb[j]));
    }
  }
  return mi;
}

} // namespace

double mutual_information(const ImageGrid &a, const ImageGrid &b, int bins,
                          const std::vector<std::uint8_t> &overlap_mask) {
  if (bins < 2) throw Error("mutual_information needs bins >= 2");
  check_shapes(a, b, overlap_mask);
  std::vector<double> joint(static_cast<std::size_t>(bins) * bins, 0.0);
  std::size_t n = 0;
  for (std::size_t i = 0; i < a.pixel_count(); ++i) {
    if (!overlap_mask.empty() && overlap_mask[i] == 0) continue;
    joint[static_cast<std::size_t>(bin_of(a.data[i], bins)) * bins +
          bin_of(b.data[i], bins)] += 1.0;
    ++n;
  }
  if (n == 0) throw EmptyOverlap("no pixels in the overlap region");
  return mi_from_joint(joint, bins, bins, static_cast<double>(n));
}

double intensity_entropy(const ImageGrid &img, int bins) {
  if (bins < 2) throw Error("intensity_entropy needs bins >= 2");
  if (img.pixel_count() == 0) throw EmptyOverlap("empty image");
  std::vector<double> hist(bins, 0.0);
  for (float v : img.data) hist[bin_of(v, bins)] += 1.0;
  const double n = static_cast<double>(img.pixel_count());
  double h = 0.0;
  for (double c : hist) {
    if (c > 0.0) h -= (c / n) * std::log(c / n);
  }
  return h;
}

double cross_correlation(const ImageGrid &a, const ImageGrid &b,
                         const std::vector<std::uint8_t> &overlap_mask) {
  check_shapes(a, b, overlap_mask);
  double sa = 0.0, sb = 0.0;
  std::size_t n = 0;
  for (std::size_t i = 0; i < a.pixel_count(); ++i) {
    if (!overlap_mask.empty() && overlap_mask[i] == 0) continue;
    sa += a.data[i];
    sb += b.data[i];
    ++n;
  }
  if (n == 0) throw EmptyOverlap("no pixels in the overlap region");
  const double ma = sa / n, mb = sb / n;
  double vaa = 0.0, vbb = 0.0, vab = 0.0;
  for (std::size_t i = 0; i < a.pixel_count(); ++i) {
    if (!overlap_mask.empty() && overlap_mask[i] == 0) continue;
    const double da = a.data[i] - ma;
    const double db = b.data[i] - mb;
    vaa += da * da;
    vbb += db * db;
    vab += da * db;
  }
  const double floor = 1e-18 * static_cast<double>(n);
  if (vaa <= floor || vbb <= floor) {
    throw DegenerateVariance("an image is constant over the overlap region");
  }
  return vab / std::sqrt(vaa * vbb);
}

double metric_value(const SimilarityMetric &metric, const ImageGrid &a,
                    const ImageGrid &b,
                    const std::vector<std::uint8_t> &overlap_mask) {
  if (metric.kind == SimilarityMetric::Kind::MutualInformation) {
    return mutual_information(a, b, metric.bins, overlap_mask);
  }
  return cross_correlation(a, b, overlap_mask);
}

namespace {

int clamp_levels(int levels, int min_side) {
  if (levels < 1) levels = 1;
  int eff = 1;
  while (eff < levels) {
    const int next_side = (min_side + (1 << eff) - 1) / (1 << eff);
    if (next_side < 16) break;
    ++eff;
  }
  return eff;
}

} // namespace

std::vector<ImageGrid> build_pyramid(const ImageGrid &image, int levels) {
  if (image.width <= 0 || image.height <= 0) {
    throw Error("build_pyramid needs a nonempty image");
  }
  const int eff = clamp_levels(levels, std::min(image.width, image.height));
  std::vector<ImageGrid> chain;
  chain.reserve(eff);
  chain.push_back(image);
  for (int k = 1; k < eff; ++k) {
    chain.push_back(detail::downsample_half(
        detail::gaussian_smooth(chain.back(), 1.0)));
  }
  std::reverse(chain.begin(), chain.end());
  return chain;
}

namespace {

// Correction applied after the base transform, parameterized about the fixed
// image center so translations stay decoupled from rotation/scale/shear.
// params = (tx, ty, rotation, scale_x - 1, scale_y - 1, shear)
Affine2D delta_from_params(const std::array<double, 6> &p, double cx,
                           double cy) {
  const double c = std::cos(p[2]);
  const double s = std::sin(p[2]);
  const double sx = 1.0 + p[3];
  const double sy = 1.0 + p[4];
  const double k = p[5];
  const double l00 = c * sx;
  const double l01 = (c * k - s) * sy;
  const double l10 = s * sx;
  const double l11 = (s * k + c) * sy;
  return Affine2D::from_coeffs(l00, l01, cx + p[0] - (l00 * cx + l01 * cy),
                               l10, l11, cy + p[1] - (l10 * cx + l11 * cy));
}

struct FusedEval {
  const ImageGrid *fixed = nullptr;
  const ImageGrid *moving = nullptr;
  SimilarityMetric::Kind kind = SimilarityMetric::Kind::MutualInformation;
  int bins = 32;
  std::size_t min_overlap = 32;
  std::vector<double> joint; // reused workspace

  // Warp + metric in one pass; candidate maps moving -> fixed coordinates.
  // Returns -inf for rejected candidates (singular, tiny overlap, degenerate
  // variance).
  double operator()(const Affine2D &candidate, long &eval_count) {
    Affine2D inv;
    try {
      inv = invert(candidate);
    } catch (const SingularTransform &) {
      return kRejected;
    }
    ++eval_count;
    const int w = fixed->width, h = fixed->height;
    const double xmax = moving->width - 1;
    const double ymax = moving->height - 1;
    std::size_t n = 0;
    double sa = 0, sb = 0, saa = 0, sbb = 0, sab = 0;
    const bool use_mi = kind == SimilarityMetric::Kind::MutualInformation;
    if (use_mi) {
      joint.assign(static_cast<std::size_t>(bins) * bins, 0.0);
    }
    for (int y = 0; y < h; ++y) {
      double sx = inv.m[1] * y + inv.m[2];
      double sy = inv.m[4] * y + inv.m[5];
      const float *frow = fixed->data.data() + static_cast<std::size_t>(y) * w;
      for (int x = 0; x < w; ++x, sx += inv.m[0], sy += inv.m[3]) {
        if (sx < 0.0 || sy < 0.0 || sx > xmax || sy > ymax) continue;
        const float mv = sample_bilinear(*moving, sx, sy, 0.0f);
        const float fv = frow[x];
        ++n;
        if (use_mi) {
          joint[static_cast<std::size_t>(bin_of(fv, bins)) * bins +
                bin_of(mv, bins)] += 1.0;
        } else {
          sa += fv;
          sb += mv;
          saa += static_cast<double>(fv) * fv;
          sbb += static_cast<double>(mv) * mv;
          sab += static_cast<double>(fv) * mv;
        }
      }
    }
    if (n < min_overlap) return kRejected;
    if (use_mi) {
      return mi_from_joint(joint, bins, bins, static_cast<double>(n));
    }
    const double dn = static_cast<double>(n);
    const double va = saa - sa * sa / dn;
    const double vb = sbb - sb * sb / dn;
    if (va <= 1e-18 * dn || vb <= 1e-18 * dn) return kRejected;
    return (sab - sa * sb / dn) / std::sqrt(va * vb);
  }
};

// Working-resolution metric through the public warp + metric ops, so the
// reported trace is exactly what a caller would recompute.
double full_metric(const SimilarityMetric &metric, const ImageGrid &fixed,
                   const ImageGrid &moving, const Affine2D &candidate,
                   std::size_t min_overlap, long &eval_count) {
  ++eval_count;
  WarpedImage warped;
  try {
    warped = warp_image_masked(candidate, moving, fixed.width, fixed.height);
  } catch (const SingularTransform &) {
    return kRejected;
  }
  std::size_t n = 0;
  for (auto v : warped.valid) n += v;
  if (n < min_overlap) return kRejected;
  try {
    return metric_value(metric, fixed, warped.image, warped.valid);
  } catch (const Error &) {
    return kRejected;
  }
}

} // namespace

RefineResult refine_affine(const ImageGrid &fixed, const ImageGrid &moving,
                           const Affine2D &init, const RefineConfig &cfg) {
  if (fixed.pixel_count() == 0 || moving.pixel_count() == 0) {
    throw Error("refine_affine needs nonempty images");
  }
  if (cfg.metric.bins < 2) throw Error("similarity metric needs bins >= 2");
  invert(init); // singular init is fatal

  const int eff = std::min(
      clamp_levels(cfg.pyramid_levels, std::min(fixed.width, fixed.height)),
      clamp_levels(cfg.pyramid_levels, std::min(moving.width, moving.height)));
  const auto pyr_fixed = build_pyramid(fixed, eff);
  const auto pyr_moving = build_pyramid(moving, eff);

  RefineResult result;
  const std::size_t min_overlap_full =
      std::max<std::size_t>(32, fixed.pixel_count() / 10);

  Affine2D best = init;
  double best_metric = full_metric(cfg.metric, fixed, moving, init,
                                   min_overlap_full, result.metric_evaluations);
  result.init_metric = best_metric;
  result.trace.push_back(best_metric);

  for (int idx = 0; idx < eff; ++idx) {
    const double f = static_cast<double>(1 << (eff - 1 - idx));
    const ImageGrid &level_fixed = pyr_fixed[idx];
    const ImageGrid &level_moving = pyr_moving[idx];

    FusedEval eval;
    eval.fixed = &level_fixed;
    eval.moving = &level_moving;
    eval.kind = cfg.metric.kind;
    const int shift = eff - 1 - idx;
    eval.bins = std::max(std::min(cfg.metric.bins, 8), cfg.metric.bins >> shift);
    eval.min_overlap =
        std::max<std::size_t>(32, level_fixed.pixel_count() / 10);

    // base transform in level coordinates: S(1/f) * best * S(f)
    const Affine2D base =
        compose(compose(Affine2D::scaling(f, f), best),
                Affine2D::scaling(1.0 / f, 1.0 / f));
    const double cx = 0.5 * (level_fixed.width - 1);
    const double cy = 0.5 * (level_fixed.height - 1);
    const double radius =
        0.5 * std::hypot(level_fixed.width, level_fixed.height);
    const std::array<double, 6> units{1.0,          1.0,          1.0 / radius,
                                      1.0 / radius, 1.0 / radius, 1.0 / radius};

    std::array<double, 6> params{};
    double cur = eval(compose(base, delta_from_params(params, cx, cy)),
                      result.metric_evaluations);
    double step = idx == 0 ? cfg.initial_step_px
                           : std::min(cfg.initial_step_px, 2.0);

    for (int iter = 0; iter < cfg.max_iterations_per_level; ++iter) {
      double poll_best = kRejected;
      std::array<double, 6> poll_params{};
      for (int k = 0; k < 6; ++k) {
        for (int sgn = -1; sgn <= 1; sgn += 2) {
          std::array<double, 6> trial = params;
          trial[k] += sgn * step * cfg.parameter_scales[k] * units[k];
          const double m =
              eval(compose(base, delta_from_params(trial, cx, cy)),
                   result.metric_evaluations);
          if (m > poll_best) {
            poll_best = m;
            poll_params = trial;
          }
        }
      }
      const double margin =
          std::isfinite(cur) ? cfg.convergence_tol * std::max(1.0, std::abs(cur))
                             : 0.0;
      if (poll_best > (std::isfinite(cur) ? cur + margin : kRejected)) {
        params = poll_params;
        cur = poll_best;
        const Affine2D cand_level = compose(base, delta_from_params(params, cx, cy));
        const Affine2D cand_work =
            compose(compose(Affine2D::scaling(1.0 / f, 1.0 / f), cand_level),
                    Affine2D::scaling(f, f));
        const double fm = full_metric(cfg.metric, fixed, moving, cand_work,
                                      min_overlap_full,
                                      result.metric_evaluations);
        if (fm > best_metric) {
          best = cand_work;
          best_metric = fm;
          result.trace.push_back(fm);
        }
        result.detail.push_back({idx, iter, cur, params});
      } else {
        step *= cfg.step_shrink;
        if (step < cfg.min_step_px) break;
      }
    }
  }

  result.transform = best;
  result.final_metric = best_metric;
  return result;
}

} // namespace serialreg
