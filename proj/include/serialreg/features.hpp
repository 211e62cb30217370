#pragma once

#include "serialreg/geometry.hpp"

#include <cstdint>
#include <vector>

namespace serialreg {

struct Keypoint {
  Point2D position;              // inside image bounds
  double response = 0.0;         // corner strength, >= 0
  std::vector<float> descriptor; // L2-normalized, fixed length per config
};

struct Match {
  int index_a = -1;
  int index_b = -1;
  double score = 0.0; // 1 - normalized descriptor distance, in [0, 1]
};

struct MatchSet {
  std::vector<Match> pairs;
  std::vector<std::uint8_t> inlier_mask; // empty, or aligned with pairs
};

struct FeatureConfig {
  int max_keypoints = 2048;
  double detection_threshold = 0.01; // fraction of the max corner response
  double ratio_test = 0.8;
  int ransac_iterations = 2000;
  double inlier_tolerance_px = 3.0;
  int min_inliers = 12;
  std::uint64_t seed = 0;
};

/// Harris-style corner detection on a smoothed image, non-maximum suppression
/// radius 5 px, descriptors from an 8x8 intensity patch sampled at 4x
/// downsample around the keypoint (mean-subtracted, L2-normalized).
/// Result is sorted by descending response, at most max_keypoints entries,
/// deterministic for a given image + config.
std::vector<Keypoint> detect_keypoints(const ImageGrid &image,
                                       const FeatureConfig &cfg);

/// Mutual-nearest-neighbor matching with a Lowe-style ratio test. One-to-one;
/// scores are 1 - d/2 for L2 distance d between unit descriptors.
MatchSet match_keypoints(const std::vector<Keypoint> &a,
                         const std::vector<Keypoint> &b,
                         const FeatureConfig &cfg);

struct RansacResult {
  Affine2D transform; // maps a-coordinates into b's frame
  MatchSet matches;   // input pairs with inlier_mask filled
  int inlier_count = 0;
  double mean_inlier_error_px = 0.0;
};

/// Seeded RANSAC over 3-point minimal samples followed by a least-squares
/// refit on the inliers. Inlier = reprojection error <= inlier_tolerance_px
/// under the returned transform. Throws InsufficientMatches (< 3 pairs) or
/// NoConsensus (best inlier count < min_inliers).
RansacResult estimate_affine_ransac(const std::vector<Keypoint> &a,
                                    const std::vector<Keypoint> &b,
                                    const MatchSet &matches,
                                    const FeatureConfig &cfg);

struct Stage1Result {
  Affine2D transform; // maps moving-frame coordinates into the fixed frame
  Stage1Diagnostics diagnostics;
  MatchSet matches;
  std::vector<Keypoint> keypoints_fixed;
  std::vector<Keypoint> keypoints_moving;
};

/// detect -> match -> estimate on a preprocessed pair. Failures surface as
/// Stage1Failure carrying keypoint/match/inlier diagnostics.
Stage1Result register_pair_features(const ImageGrid &fixed,
                                    const ImageGrid &moving,
                                    const FeatureConfig &cfg);

/// Diagnostic dump for one pair: a side-by-side matched-keypoint overlay at
/// <prefix>.png (inliers green, outliers red) and a JSON record of keypoint
/// counts, matches, inliers and reprojection residuals at <prefix>.json.
void dump_stage1_diagnostics(const ImageGrid &fixed, const ImageGrid &moving,
                             const Stage1Result &result,
                             const std::string &output_prefix);

} // namespace serialreg
