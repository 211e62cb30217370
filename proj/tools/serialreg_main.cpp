#include "serialreg/pipeline.hpp"
#include "serialreg/synthetic.hpp"

#include "../src/detail/rng.hpp"

#include <CLI11.hpp>

#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>

namespace fs = std::filesystem;
using namespace serialreg;

namespace {

struct RegisterOverrides {
  std::string method;
  std::optional<std::uint64_t> seed;
  std::optional<int> workers;
  bool emit_warped = false, emit_overlays = false, emit_traces = false;
};

int cmd_register(const std::string &manifest_path, const std::string &config_path,
                 const std::string &out_dir, const RegisterOverrides &ov) {
  PipelineConfig cfg;
  if (!config_path.empty()) {
    std::ifstream in(config_path);
    if (!in) throw ParseError("cannot open config: " + config_path);
    nlohmann::json j;
    in >> j;
    cfg = config_from_json(j);
  }
  if (!ov.method.empty()) cfg.method = method_from_string(ov.method);
  if (ov.seed) cfg.seed = *ov.seed;
  if (ov.workers) cfg.worker_count = *ov.workers;
  cfg.emit_warped = cfg.emit_warped || ov.emit_warped;
  cfg.emit_overlays = cfg.emit_overlays || ov.emit_overlays;
  cfg.emit_traces = cfg.emit_traces || ov.emit_traces;

  const SeriesManifest manifest = load_manifest(manifest_path);
  const RunOutputs outputs = run_pipeline(manifest, cfg, out_dir);

  std::cout << "registered " << manifest.sections.size() << " sections ("
            << to_string(cfg.method) << "), middle index "
            << outputs.registration.middle_index << "\n";
  if (outputs.metrics) {
    std::cout << "metrics: mean distance "
              << outputs.metrics->distance_mean_um << " um, median "
              << outputs.metrics->distance_median_um << " um, box IoU "
              << outputs.metrics->box_iou_mean << ", circle IoU "
              << outputs.metrics->circle_iou_mean << "\n";
  }
  if (outputs.fallback_count > 0) {
    std::cerr << outputs.fallback_count
              << " pair(s) used an identity fallback; see run_summary.json\n";
    return 2;
  }
  return 0;
}


int cmd_evaluate(const std::string &registration_path,
                 const std::string &annotations_path, const std::string &out_dir,
                 double spacing_um) {
  const SeriesRegistration reg = load_series(registration_path);
  const auto tracks = load_annotations_csv(annotations_path, reg.section_ids);
  const double spacing =
      spacing_um > 0 ? spacing_um : reg.spacing_of(reg.middle_index);
  const MetricsReport report = evaluate_series(tracks, reg, spacing);

  fs::create_directories(out_dir);
  write_metrics_csv(report, (fs::path(out_dir) / "metrics_rows.csv").string());
  std::ofstream summary(fs::path(out_dir) / "metrics_summary.json");
  if (!summary) throw WriteError("cannot write metrics_summary.json");
  summary << metrics_summary_json(report, "evaluate").dump(2) << "\n";

  std::cout << "evaluated " << report.tracks_evaluated << " tracks, "
            << report.rows.size() << " boxes\n"
            << "mean distance " << report.distance_mean_um << " um, median "
            << report.distance_median_um << " um\n"
            << "mean box IoU " << report.box_iou_mean << ", mean circle IoU "
            << report.circle_iou_mean << "\n";
  return 0;
}

int cmd_synth(const std::string &out_dir, std::uint64_t seed, int sections,
              int width, int height, int blobs, double occlusion, double noise,
              const std::vector<std::string> &stains, double max_rotation_deg,
              double max_translation_frac, double scale_lo, double scale_hi,
              bool no_elongated, const std::string &case_id) {
  PhantomSpec spec;
  spec.seed = seed;
  spec.width = width;
  spec.height = height;
  spec.blob_count = blobs;
  spec.elongated = !no_elongated;

  detail::Rng rng(detail::mix64(seed, 0x5F17));
  std::vector<Affine2D> planted;
  for (int t = 0; t + 1 < sections; ++t) {
    const double rot = rng.uniform(-max_rotation_deg, max_rotation_deg) * M_PI / 180.0;
    const double tx = rng.uniform(-1.0, 1.0) * max_translation_frac * width;
    const double ty = rng.uniform(-1.0, 1.0) * max_translation_frac * height;
    const double sx = rng.uniform(scale_lo, scale_hi);
    const double sy = rng.uniform(scale_lo, scale_hi);
    const double cx = 0.5 * width, cy = 0.5 * height;
    Affine2D t_about_center = compose(
        compose(Affine2D::translation(-cx, -cy),
                compose(Affine2D::scaling(sx, sy), Affine2D::rotation(rot))),
        Affine2D::translation(cx + tx, cy + ty));
    planted.push_back(t_about_center);
  }

  SeriesArtifacts artifacts;
  artifacts.occlusion_fraction = occlusion;
  artifacts.noise_sigma = noise;
  if (!stains.empty()) {
    artifacts.stains.reserve(sections);
    for (int t = 0; t < sections; ++t) {
      artifacts.stains.push_back(stains[t % stains.size()]);
    }
  }

  const SyntheticSeries series = make_series(spec, sections, planted, artifacts);
  write_series_dataset(series, case_id, out_dir);
  std::cout << "wrote " << sections << "-section phantom series to " << out_dir
            << "\n";
  return 0;
}

} // namespace

int main(int argc, char **argv) {
  CLI::App app{"serial-section affine registration into the middle section's frame"};
  app.require_subcommand(1);

  // register
  auto *reg = app.add_subcommand("register", "register a section series");
  std::string manifest_path, config_path, out_dir, method;
  std::uint64_t seed = 0;
  int workers = 1;
  bool emit_warped = false, emit_overlays = false, emit_traces = false;
  reg->add_option("--manifest", manifest_path, "series manifest JSON")->required();
  reg->add_option("--config", config_path, "pipeline config JSON");
  reg->add_option("--out", out_dir, "output directory")->required();
  reg->add_option("--method", method, "two_stage|stage1_only|stage2_only");
  reg->add_option("--seed", seed, "random seed");
  reg->add_option("--workers", workers, "parallel pair registrations");
  reg->add_flag("--emit-warped", emit_warped, "write warped sections");
  reg->add_flag("--emit-overlays", emit_overlays, "write box overlays");
  reg->add_flag("--emit-traces", emit_traces, "write per-pair convergence traces");

  // evaluate
  auto *eval = app.add_subcommand("evaluate", "evaluate a registration against annotations");
  std::string registration_path, annotations_path, eval_out;
  double spacing_um = 0.0;
  eval->add_option("--registration", registration_path, "registration.json")->required();
  eval->add_option("--annotations", annotations_path, "annotation CSV")->required();
  eval->add_option("--out", eval_out, "output directory")->required();
  eval->add_option("--spacing-um", spacing_um,
                   "microns per annotation pixel (default: from registration)");

  // synth
  auto *synth = app.add_subcommand("synth", "generate a phantom series with ground truth");
  std::string synth_out, case_id = "phantom";
  std::uint64_t synth_seed = 0;
  int sections = 8, width = 1024, height = 256, blobs = 3;
  double occlusion = 0.0, noise = 0.005;
  double max_rotation_deg = 5.0, max_translation_frac = 0.03;
  double scale_lo = 0.98, scale_hi = 1.02;
  bool no_elongated = false;
  std::vector<std::string> stains;
  synth->add_option("--out", synth_out, "output directory")->required();
  synth->add_option("--seed", synth_seed, "random seed");
  synth->add_option("--sections", sections, "number of sections");
  synth->add_option("--width", width, "canvas width px");
  synth->add_option("--height", height, "canvas height px");
  synth->add_option("--blobs", blobs, "tracked blob count");
  synth->add_option("--occlusion", occlusion, "occluded tissue fraction [0,0.5]");
  synth->add_option("--noise", noise, "additive RGB noise sigma");
  synth->add_option("--stains", stains, "stain labels, cycled across sections");
  synth->add_option("--max-rotation-deg", max_rotation_deg, "planted |rotation| bound");
  synth->add_option("--max-translation-frac", max_translation_frac,
                    "planted |translation| bound, fraction of canvas");
  synth->add_option("--scale-lo", scale_lo, "planted scale lower bound");
  synth->add_option("--scale-hi", scale_hi, "planted scale upper bound");
  synth->add_flag("--no-elongated", no_elongated, "full-canvas tissue instead of a needle strip");
  synth->add_option("--case-id", case_id, "case identifier");

  CLI11_PARSE(app, argc, argv);

  try {
    if (reg->parsed()) {
      RegisterOverrides ov;
      ov.method = method;
      if (reg->count("--seed") > 0) ov.seed = seed;
      if (reg->count("--workers") > 0) ov.workers = workers;
      ov.emit_warped = emit_warped;
      ov.emit_overlays = emit_overlays;
      ov.emit_traces = emit_traces;
      return cmd_register(manifest_path, config_path, out_dir, ov);
    }
    if (eval->parsed()) {
      return cmd_evaluate(registration_path, annotations_path, eval_out, spacing_um);
    }
    if (synth->parsed()) {
      return cmd_synth(synth_out, synth_seed, sections, width, height, blobs,
                       occlusion, noise, stains, max_rotation_deg,
                       max_translation_frac, scale_lo, scale_hi, no_elongated,
                       case_id);
    }
  } catch (const Error &e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  } catch (const std::exception &e) {
    std::cerr << "unexpected error: " << e.what() << "\n";
    return 1;
  }
  return 0;
}
