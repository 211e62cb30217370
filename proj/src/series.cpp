#include "serialreg/series.hpp"

#include <fstream>

namespace serialreg {

std::string to_string(RegistrationMethod method) {
  switch (method) {
    case RegistrationMethod::stage1_only: return "stage1_only";
    case RegistrationMethod::stage2_only: return "stage2_only";
    case RegistrationMethod::two_stage: return "two_stage";
  }
  return "two_stage";
}

RegistrationMethod method_from_string(const std::string &name) {
  if (name == "stage1_only") return RegistrationMethod::stage1_only;
  if (name == "stage2_only") return RegistrationMethod::stage2_only;
  if (name == "two_stage") return RegistrationMethod::two_stage;
  throw ParseError("unknown registration method: " + name);
}

int select_middle(int section_count) {
  if (section_count < 1) throw EmptySeries("series has no sections");
  return section_count / 2;
}

PairResult register_pair(const ImageGrid &fixed, const ImageGrid &moving,
                         const PairConfig &cfg) {
  PairResult result;
  result.diagnostics.method = to_string(cfg.method);

  Affine2D stage1 = Affine2D::identity();
  bool have_stage1 = false;
  if (cfg.method != RegistrationMethod::stage2_only) {
    try {
      Stage1Result s1 = register_pair_features(fixed, moving, cfg.features);
      stage1 = s1.transform;
      have_stage1 = true;
      if (cfg.keep_stage1) result.stage1 = s1;
      result.diagnostics.stage1_ok = true;
      result.diagnostics.keypoints_fixed = s1.diagnostics.keypoints_fixed;
      result.diagnostics.keypoints_moving = s1.diagnostics.keypoints_moving;
      result.diagnostics.match_count = s1.diagnostics.match_count;
      result.diagnostics.inlier_count = s1.diagnostics.best_inlier_count;
    } catch (const Stage1Failure &e) {
      result.diagnostics.keypoints_fixed = e.diagnostics.keypoints_fixed;
      result.diagnostics.keypoints_moving = e.diagnostics.keypoints_moving;
      result.diagnostics.match_count = e.diagnostics.match_count;
      result.diagnostics.inlier_count = e.diagnostics.best_inlier_count;
      result.diagnostics.note = e.what();
      if (cfg.method == RegistrationMethod::stage1_only) {
        throw PairRegistrationFailure(std::string("stage 1 failed: ") + e.what());
      }
    }
  }

  if (cfg.method == RegistrationMethod::stage1_only) {
    result.transform = stage1;
    return result;
  }

  const Affine2D init = have_stage1 ? stage1 : Affine2D::identity();
  if (cfg.method == RegistrationMethod::two_stage && !have_stage1) {
    result.diagnostics.used_identity_fallback = true;
  }
  try {
    result.refine = refine_affine(fixed, moving, init, cfg.refine);
    result.transform = result.refine.transform;
    result.diagnostics.final_metric = result.refine.final_metric;
  } catch (const Error &e) {
    if (have_stage1) {
      // stage 2 collapsed but stage 1 stands; keep the global estimate
      result.transform = stage1;
      result.diagnostics.note = std::string("stage 2 failed: ") + e.what();
      return result;
    }
    throw PairRegistrationFailure(std::string("both stages failed: ") + e.what());
  }
  return result;
}

std::vector<Affine2D> propagate(const std::vector<Affine2D> &pair_transforms,
                                int middle_index) {
  const int count = static_cast<int>(pair_transforms.size()) + 1;
  if (middle_index < 0 || middle_index >= count) {
    throw Error("middle_index out of range");
  }
  std::vector<Affine2D> global(count);
  global[middle_index] = Affine2D::identity();
  // above the middle: chain pairwise maps down toward the middle
  for (int t = middle_index + 1; t < count; ++t) {
    global[t] = compose(pair_transforms[t - 1], global[t - 1]);
  }
  // below the middle: invert the forward product middle -> t
  Affine2D forward = Affine2D::identity(); // maps middle coords to t coords
  for (int t = middle_index - 1; t >= 0; --t) {
    forward = compose(forward, pair_transforms[t]);
    global[t] = invert(forward);
  }
  return global;
}

SeriesRegistration assemble_series(std::vector<std::string> section_ids,
                                   std::vector<Affine2D> pair_transforms) {
  if (section_ids.empty()) throw EmptySeries("series has no sections");
  if (pair_transforms.size() + 1 != section_ids.size()) {
    throw LengthMismatch("expected " +
                         std::to_string(section_ids.size() - 1) +
                         " pair transforms, got " +
                         std::to_string(pair_transforms.size()));
  }
  SeriesRegistration reg;
  reg.section_ids = std::move(section_ids);
  reg.pair_transforms = std::move(pair_transforms);
  reg.middle_index = select_middle(static_cast<int>(reg.section_ids.size()));
  reg.global_transforms = propagate(reg.pair_transforms, reg.middle_index);
  return reg;
}

namespace {

nlohmann::json diagnostics_to_json(const PairDiagnostics &d) {
  return nlohmann::json{{"method", d.method},
                        {"stage1_ok", d.stage1_ok},
                        {"used_identity_fallback", d.used_identity_fallback},
                        {"keypoints_fixed", d.keypoints_fixed},
                        {"keypoints_moving", d.keypoints_moving},
                        {"match_count", d.match_count},
                        {"inlier_count", d.inlier_count},
                        {"final_metric", d.final_metric},
                        {"note", d.note}};
}

PairDiagnostics diagnostics_from_json(const nlohmann::json &j) {
  PairDiagnostics d;
  d.method = j.value("method", "two_stage");
  d.stage1_ok = j.value("stage1_ok", false);
  d.used_identity_fallback = j.value("used_identity_fallback", false);
  d.keypoints_fixed = j.value("keypoints_fixed", 0);
  d.keypoints_moving = j.value("keypoints_moving", 0);
  d.match_count = j.value("match_count", 0);
  d.inlier_count = j.value("inlier_count", 0);
  d.final_metric = j.value("final_metric", 0.0);
  d.note = j.value("note", "");
  return d;
}

} // namespace

nlohmann::json series_to_json(const SeriesRegistration &reg) {
  nlohmann::json j;
  j["section_ids"] = reg.section_ids;
  j["middle_index"] = reg.middle_index;
  j["pair_transforms"] = nlohmann::json::array();
  for (const auto &t : reg.pair_transforms) {
    j["pair_transforms"].push_back(affine_to_json(t));
  }
  j["global_transforms"] = nlohmann::json::array();
  for (const auto &t : reg.global_transforms) {
    j["global_transforms"].push_back(affine_to_json(t));
  }
  if (!reg.pair_diagnostics.empty()) {
    j["pair_diagnostics"] = nlohmann::json::array();
    for (const auto &d : reg.pair_diagnostics) {
      j["pair_diagnostics"].push_back(diagnostics_to_json(d));
    }
  }
  if (!reg.downsample.empty()) j["downsample"] = reg.downsample;
  if (!reg.spacing_um.empty()) j["spacing_um"] = reg.spacing_um;
  return j;
}

SeriesRegistration series_from_json(const nlohmann::json &j) {
  SeriesRegistration reg;
  try {
    reg.section_ids = j.at("section_ids").get<std::vector<std::string>>();
    reg.middle_index = j.at("middle_index").get<int>();
    for (const auto &t : j.at("pair_transforms")) {
      reg.pair_transforms.push_back(affine_from_json(t));
    }
    for (const auto &t : j.at("global_transforms")) {
      reg.global_transforms.push_back(affine_from_json(t));
    }
    if (j.contains("pair_diagnostics")) {
      for (const auto &d : j["pair_diagnostics"]) {
        reg.pair_diagnostics.push_back(diagnostics_from_json(d));
      }
    }
    if (j.contains("downsample")) {
      reg.downsample = j["downsample"].get<std::vector<double>>();
    }
    if (j.contains("spacing_um")) {
      reg.spacing_um = j["spacing_um"].get<std::vector<double>>();
    }
  } catch (const nlohmann::json::exception &e) {
    throw ParseError(std::string("invalid series registration JSON: ") + e.what());
  }
  if (reg.section_ids.empty() ||
      reg.pair_transforms.size() + 1 != reg.section_ids.size() ||
      reg.global_transforms.size() != reg.section_ids.size() ||
      reg.middle_index < 0 ||
      reg.middle_index >= static_cast<int>(reg.section_ids.size())) {
    throw ParseError("series registration JSON is inconsistent");
  }
  return reg;
}

void save_series(const SeriesRegistration &reg, const std::string &path) {
  std::ofstream out(path);
  if (!out) throw WriteError("cannot open for writing: " + path);
  out << series_to_json(reg).dump(2) << "\n";
  if (!out) throw WriteError("failed writing: " + path);
}

SeriesRegistration load_series(const std::string &path) {
  std::ifstream in(path);
  if (!in) throw ParseError("cannot open registration file: " + path);
  nlohmann::json j;
  try {
    in >> j;
  } catch (const nlohmann::json::exception &e) {
    throw ParseError(std::string("invalid JSON in ") + path + ": " + e.what());
  }
  return series_from_json(j);
}

} // namespace serialreg
