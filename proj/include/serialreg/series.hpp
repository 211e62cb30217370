#pragma once

#include "serialreg/features.hpp"
#include "serialreg/geometry.hpp"
#include "serialreg/intensity.hpp"

#include <json.hpp>

#include <optional>
#include <string>
#include <vector>

namespace serialreg {

enum class RegistrationMethod { stage1_only, stage2_only, two_stage };

std::string to_string(RegistrationMethod method);
RegistrationMethod method_from_string(const std::string &name);

struct PairConfig {
  FeatureConfig features;
  RefineConfig refine;
  RegistrationMethod method = RegistrationMethod::two_stage;
  bool keep_stage1 = false; // retain keypoints/matches for diagnostic dumps
};

struct PairDiagnostics {
  std::string method = "two_stage";
  bool stage1_ok = false;
  bool used_identity_fallback = false;
  int keypoints_fixed = 0;
  int keypoints_moving = 0;
  int match_count = 0;
  int inlier_count = 0;
  double final_metric = 0.0;
  std::string note;
};

struct PairResult {
  Affine2D transform; // maps moving-frame coordinates into the fixed frame
  PairDiagnostics diagnostics;
  RefineResult refine;                 // populated when stage 2 ran (for traces)
  std::optional<Stage1Result> stage1;  // populated when cfg.keep_stage1 is set
};

/// floor(T/2), 0-based. Throws EmptySeries for T = 0.
int select_middle(int section_count);

/// Two-stage pairwise registration M(t): stage-2 refinement initialized from
/// the stage-1 estimate. If stage 1 fails under two_stage, stage 2 runs from
/// identity and the fallback is recorded. Throws PairRegistrationFailure only
/// when no stage produced a transform.
PairResult register_pair(const ImageGrid &fixed, const ImageGrid &moving,
                         const PairConfig &cfg);

/// Per-section transforms into the middle section's frame. pair_transforms[t]
/// maps section t+1's frame into section t's frame; the result's entry t maps
/// section t's frame into the middle frame. Entry middle_index is exactly
/// identity.
std::vector<Affine2D> propagate(const std::vector<Affine2D> &pair_transforms,
                                int middle_index);

struct SeriesRegistration {
  std::vector<std::string> section_ids;
  std::vector<Affine2D> pair_transforms;   // T-1 entries, t+1 -> t
  int middle_index = 0;
  std::vector<Affine2D> global_transforms; // T entries, t -> middle
  std::vector<PairDiagnostics> pair_diagnostics; // empty or T-1
  // annotation pixels per working pixel, per section (empty = all 1.0)
  std::vector<double> downsample;
  // microns per annotation pixel, per section (empty = all 1.0)
  std::vector<double> spacing_um;

  double downsample_of(int t) const {
    return downsample.empty() ? 1.0 : downsample[t];
  }
  double spacing_of(int t) const {
    return spacing_um.empty() ? 1.0 : spacing_um[t];
  }
};

SeriesRegistration assemble_series(std::vector<std::string> section_ids,
                                   std::vector<Affine2D> pair_transforms);

nlohmann::json series_to_json(const SeriesRegistration &reg);
SeriesRegistration series_from_json(const nlohmann::json &j);
void save_series(const SeriesRegistration &reg, const std::string &path);
SeriesRegistration load_series(const std::string &path);

} // namespace serialreg
