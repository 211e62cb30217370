#pragma once

#include "serialreg/geometry.hpp"

#include <array>
#include <cstdint>
#include <vector>

namespace serialreg {

struct SimilarityMetric {
  enum class Kind { MutualInformation, CrossCorrelation };
  Kind kind = Kind::MutualInformation;
  int bins = 32; // MI histogram bins, >= 2

  static SimilarityMetric mutual_information(int bins = 32) {
    return {Kind::MutualInformation, bins};
  }
  static SimilarityMetric cross_correlation() {
    return {Kind::CrossCorrelation, 32};
  }
};

struct RefineConfig {
  SimilarityMetric metric{};
  int pyramid_levels = 3;           // coarsest level clamped to >= 16 px/side
  int max_iterations_per_level = 200;
  // step weights for (tx, ty, rotation, scale_x, scale_y, shear); rotation,
  // scale and shear are internally expressed so one unit moves the image
  // corners by roughly one pixel
  std::array<double, 6> parameter_scales{1, 1, 1, 1, 1, 1};
  double convergence_tol = 1e-6;    // relative metric improvement to accept
  double step_shrink = 0.5;
  double initial_step_px = 8.0;
  double min_step_px = 0.05;
};

/// Mutual information of the joint intensity histogram, in nats, computed
/// over the pixels where `overlap_mask` is nonzero (empty mask = everywhere).
/// Equal-width bins over [0, 1].
double mutual_information(const ImageGrid &a, const ImageGrid &b, int bins,
                          const std::vector<std::uint8_t> &overlap_mask = {});

/// Pearson correlation of overlapping intensities, in [-1, 1].
double cross_correlation(const ImageGrid &a, const ImageGrid &b,
                         const std::vector<std::uint8_t> &overlap_mask = {});

/// Shannon entropy of the marginal intensity histogram (nats); the MI(I, I)
/// reference value.
double intensity_entropy(const ImageGrid &img, int bins);

/// Coarse-to-fine pyramid, element 0 coarsest. Smoothing is applied before
/// each factor-2 downsample; spacing_um doubles per coarsening. Levels are
/// clamped so the coarsest level keeps >= 16 px per side.
std::vector<ImageGrid> build_pyramid(const ImageGrid &image, int levels);

double metric_value(const SimilarityMetric &metric, const ImageGrid &a,
                    const ImageGrid &b,
                    const std::vector<std::uint8_t> &overlap_mask = {});

struct RefineTraceRow {
  int level = 0;
  int iteration = 0;
  double metric = 0.0;
  std::array<double, 6> params{}; // (tx, ty, rot, sx, sy, shear) at this level
};

struct RefineResult {
  Affine2D transform; // full moving->fixed map, init included
  // working-resolution metric after each accepted improvement; entry 0 is the
  // metric at init, so the sequence is non-decreasing and front() <= back()
  std::vector<double> trace;
  std::vector<RefineTraceRow> detail; // per accepted step, level metric
  double init_metric = 0.0;
  double final_metric = 0.0;
  long metric_evaluations = 0;
};

/// Multi-resolution derivative-free refinement of an affine init: pattern
/// search over 6 parameters (translation, rotation, scales, shear about the
/// fixed image center), maximizing the similarity metric between `fixed` and
/// the warped `moving`. Never returns a transform whose working-resolution
/// metric is below the metric at `init`. Throws SingularTransform only if
/// `init` itself is singular; singular candidates are just rejected.
RefineResult refine_affine(const ImageGrid &fixed, const ImageGrid &moving,
                           const Affine2D &init, const RefineConfig &cfg);

} // namespace serialreg
