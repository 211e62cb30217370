#include "serialreg/pipeline.hpp"

#include "detail/filters.hpp"
#include "detail/rng.hpp"

#include <algorithm>
#include <atomic>
#include <chrono>
#include <cmath>
#include <fstream>
#include <functional>
#include <set>
#include <thread>

namespace serialreg {

namespace fs = std::filesystem;

namespace {

const std::set<std::string> kStainLabels = {"C4d", "H&E", "CD45", "JMS",
                                            "PAS", "EVG", "PV",   "MSB",
                                            "other"};

void parallel_for(int n, int workers, const std::function<void(int)> &fn) {
  workers = std::min(workers, n);
  if (workers <= 1) {
    for (int i = 0; i < n; ++i) fn(i);
    return;
  }
  std::atomic<int> next{0};
  std::vector<std::thread> pool;
  pool.reserve(workers);
  for (int w = 0; w < workers; ++w) {
    pool.emplace_back([&] {
      for (int i = next.fetch_add(1); i < n; i = next.fetch_add(1)) fn(i);
    });
  }
  for (auto &t : pool) t.join();
}

double elapsed_ms(std::chrono::steady_clock::time_point since) {
  return std::chrono::duration<double, std::milli>(
             std::chrono::steady_clock::now() - since)
      .count();
}

} // namespace

SeriesManifest load_manifest(const std::string &path) {
  std::ifstream in(path);
  if (!in) throw ParseError("cannot open manifest: " + path);
  nlohmann::json j;
  try {
    in >> j;
  } catch (const nlohmann::json::exception &e) {
    throw ParseError("manifest " + path + ": " + e.what());
  }

  SeriesManifest manifest;
  manifest.case_id = j.value("case_id", "");
  if (!j.contains("sections") || !j["sections"].is_array() ||
      j["sections"].empty()) {
    throw ParseError("manifest " + path + ": needs a nonempty 'sections' array");
  }
  const fs::path base = fs::path(path).parent_path();
  std::set<std::string> seen;
  for (const auto &s : j["sections"]) {
    SectionEntry entry;
    entry.section_id = s.value("section_id", "");
    if (entry.section_id.empty()) {
      throw ParseError("manifest section missing 'section_id'");
    }
    if (!seen.insert(entry.section_id).second) {
      throw ParseError("duplicate section_id '" + entry.section_id + "'");
    }
    const std::string rel = s.value("image_path", "");
    if (rel.empty()) {
      throw ParseError("section '" + entry.section_id + "' missing 'image_path'");
    }
    entry.image_path = (base / rel).string();
    entry.stain = s.value("stain", "other");
    if (kStainLabels.find(entry.stain) == kStainLabels.end()) {
      throw ParseError("section '" + entry.section_id + "': unknown stain '" +
                       entry.stain + "'");
    }
    entry.spacing_um = s.value("spacing_um", 1.0);
    if (!(entry.spacing_um > 0.0)) {
      throw ParseError("section '" + entry.section_id +
                       "': spacing_um must be positive");
    }
    if (!fs::exists(entry.image_path)) {
      throw MissingImage("image not found: " + entry.image_path);
    }
    if (!sniff_raster_magic(entry.image_path)) {
      throw DecodeError("unrecognized raster header: " + entry.image_path);
    }
    manifest.sections.push_back(std::move(entry));
  }
  const std::string ann = j.value("annotations_path", "");
  if (!ann.empty()) {
    manifest.annotations_path = (base / ann).string();
    if (!fs::exists(manifest.annotations_path)) {
      throw MissingImage("annotations not found: " + manifest.annotations_path);
    }
  }
  return manifest;
}

void validate_config(const PipelineConfig &cfg) {
  if (cfg.working_max_dim < 64) throw Error("working_max_dim must be >= 64");
  if (cfg.worker_count < 1) throw Error("worker_count must be >= 1");
  const auto &f = cfg.features;
  if (f.max_keypoints < 1 || f.ransac_iterations < 1 ||
      !(f.inlier_tolerance_px > 0) || f.min_inliers < 3 ||
      !(f.ratio_test > 0 && f.ratio_test <= 1)) {
    throw Error("invalid feature configuration");
  }
  const auto &r = cfg.refine;
  // max_iterations_per_level 0 disables stage-2 polling entirely
  if (r.pyramid_levels < 1 || r.metric.bins < 2 ||
      !(r.step_shrink > 0 && r.step_shrink < 1) || r.max_iterations_per_level < 0) {
    throw Error("invalid refine configuration");
  }
  const auto &p = cfg.preprocess;
  if (!(p.normalize_lo_percentile >= 0 && p.normalize_hi_percentile <= 100 &&
        p.normalize_lo_percentile < p.normalize_hi_percentile)) {
    throw Error("invalid normalization percentiles");
  }
}

PipelineConfig config_from_json(const nlohmann::json &j) {
  PipelineConfig cfg;
  cfg.working_max_dim = j.value("working_max_dim", cfg.working_max_dim);
  if (j.contains("preprocess")) {
    const auto &p = j["preprocess"];
    if (p.contains("luminance_weights")) {
      const auto w = p["luminance_weights"].get<std::vector<double>>();
      if (w.size() != 3) throw ParseError("luminance_weights needs 3 entries");
      cfg.preprocess.luminance_weights = {w[0], w[1], w[2]};
    }
    cfg.preprocess.invert = p.value("invert", cfg.preprocess.invert);
    cfg.preprocess.normalize_lo_percentile =
        p.value("normalize_lo_percentile", cfg.preprocess.normalize_lo_percentile);
    cfg.preprocess.normalize_hi_percentile =
        p.value("normalize_hi_percentile", cfg.preprocess.normalize_hi_percentile);
  }
  if (j.contains("features")) {
    const auto &f = j["features"];
    cfg.features.max_keypoints = f.value("max_keypoints", cfg.features.max_keypoints);
    cfg.features.detection_threshold =
        f.value("detection_threshold", cfg.features.detection_threshold);
    cfg.features.ratio_test = f.value("ratio_test", cfg.features.ratio_test);
    cfg.features.ransac_iterations =
        f.value("ransac_iterations", cfg.features.ransac_iterations);
    cfg.features.inlier_tolerance_px =
        f.value("inlier_tolerance_px", cfg.features.inlier_tolerance_px);
    cfg.features.min_inliers = f.value("min_inliers", cfg.features.min_inliers);
  }
  if (j.contains("refine")) {
    const auto &r = j["refine"];
    const std::string metric = r.value("metric", "mi");
    if (metric == "mi") {
      cfg.refine.metric = SimilarityMetric::mutual_information(
          r.value("bins", cfg.refine.metric.bins));
    } else if (metric == "cc") {
      cfg.refine.metric = SimilarityMetric::cross_correlation();
    } else {
      throw ParseError("refine.metric must be 'mi' or 'cc'");
    }
    cfg.refine.pyramid_levels = r.value("pyramid_levels", cfg.refine.pyramid_levels);
    cfg.refine.max_iterations_per_level =
        r.value("max_iterations_per_level", cfg.refine.max_iterations_per_level);
    if (r.contains("parameter_scales")) {
      const auto s = r["parameter_scales"].get<std::vector<double>>();
      if (s.size() != 6) throw ParseError("parameter_scales needs 6 entries");
      std::copy(s.begin(), s.end(), cfg.refine.parameter_scales.begin());
    }
    cfg.refine.convergence_tol = r.value("convergence_tol", cfg.refine.convergence_tol);
    cfg.refine.step_shrink = r.value("step_shrink", cfg.refine.step_shrink);
    cfg.refine.initial_step_px = r.value("initial_step_px", cfg.refine.initial_step_px);
    cfg.refine.min_step_px = r.value("min_step_px", cfg.refine.min_step_px);
  }
  cfg.method = method_from_string(j.value("method", "two_stage"));
  cfg.emit_warped = j.value("emit_warped", cfg.emit_warped);
  cfg.emit_overlays = j.value("emit_overlays", cfg.emit_overlays);
  cfg.emit_traces = j.value("emit_traces", cfg.emit_traces);
  cfg.seed = j.value("seed", cfg.seed);
  cfg.worker_count = j.value("worker_count", cfg.worker_count);
  validate_config(cfg);
  return cfg;
}

nlohmann::json config_to_json(const PipelineConfig &cfg) {
  return nlohmann::json{
      {"working_max_dim", cfg.working_max_dim},
      {"preprocess",
       {{"luminance_weights", cfg.preprocess.luminance_weights},
        {"invert", cfg.preprocess.invert},
        {"normalize_lo_percentile", cfg.preprocess.normalize_lo_percentile},
        {"normalize_hi_percentile", cfg.preprocess.normalize_hi_percentile}}},
      {"features",
       {{"max_keypoints", cfg.features.max_keypoints},
        {"detection_threshold", cfg.features.detection_threshold},
        {"ratio_test", cfg.features.ratio_test},
        {"ransac_iterations", cfg.features.ransac_iterations},
        {"inlier_tolerance_px", cfg.features.inlier_tolerance_px},
        {"min_inliers", cfg.features.min_inliers}}},
      {"refine",
       {{"metric",
         cfg.refine.metric.kind == SimilarityMetric::Kind::MutualInformation
             ? "mi"
             : "cc"},
        {"bins", cfg.refine.metric.bins},
        {"pyramid_levels", cfg.refine.pyramid_levels},
        {"max_iterations_per_level", cfg.refine.max_iterations_per_level},
        {"parameter_scales", cfg.refine.parameter_scales},
        {"convergence_tol", cfg.refine.convergence_tol},
        {"step_shrink", cfg.refine.step_shrink},
        {"initial_step_px", cfg.refine.initial_step_px},
        {"min_step_px", cfg.refine.min_step_px}}},
      {"method", to_string(cfg.method)},
      {"emit_warped", cfg.emit_warped},
      {"emit_overlays", cfg.emit_overlays},
      {"emit_traces", cfg.emit_traces},
      {"seed", cfg.seed},
      {"worker_count", cfg.worker_count}};
}

PreprocessedSection preprocess(const RgbImage &raw, double spacing_um,
                               const PreprocessOptions &opts,
                               int working_max_dim) {
  if (raw.width <= 0 || raw.height <= 0) throw DecodeError("empty image");
  if (working_max_dim < 64) throw Error("working_max_dim must be >= 64");

  ImageGrid gray = make_image(raw.width, raw.height, spacing_um);
  const auto &w = opts.luminance_weights;
  for (std::size_t i = 0, n = gray.pixel_count(); i < n; ++i) {
    double v = w[0] * raw.data[3 * i] + w[1] * raw.data[3 * i + 1] +
               w[2] * raw.data[3 * i + 2];
    if (opts.invert) v = 1.0 - v;
    gray.data[i] = static_cast<float>(std::clamp(v, 0.0, 1.0));
  }

  // percentile normalization to [0,1]
  {
    std::vector<float> sorted = gray.data;
    const std::size_t n = sorted.size();
    auto kth = [&](double pct) {
      const std::size_t k = static_cast<std::size_t>(
          std::llround(pct / 100.0 * static_cast<double>(n - 1)));
      std::nth_element(sorted.begin(), sorted.begin() + k, sorted.end());
      return sorted[k];
    };
    const float lo = kth(opts.normalize_lo_percentile);
    const float hi = kth(opts.normalize_hi_percentile);
    if (hi - lo < 1e-9f) {
      std::fill(gray.data.begin(), gray.data.end(), 0.0f);
    } else {
      const float scale = 1.0f / (hi - lo);
      for (auto &v : gray.data) {
        v = std::clamp((v - lo) * scale, 0.0f, 1.0f);
      }
    }
  }

  PreprocessedSection out;
  out.raw_width = raw.width;
  out.raw_height = raw.height;
  out.spacing_um_annotation = spacing_um;

  const int maxd = std::max(raw.width, raw.height);
  if (maxd <= working_max_dim) {
    out.image = std::move(gray);
    out.downsample = 1.0;
    return out;
  }
  const double factor = static_cast<double>(maxd) / working_max_dim;
  const int target_w = std::max<int>(
      1, static_cast<int>(std::llround(raw.width / factor)));
  const int target_h = std::max<int>(
      1, static_cast<int>(std::llround(raw.height / factor)));

  ImageGrid cur = std::move(gray);
  double applied = 1.0;
  while (std::max(cur.width, cur.height) >= 2 * working_max_dim) {
    cur = detail::downsample_half(detail::gaussian_smooth(cur, 1.0));
    applied *= 2.0;
  }
  if (cur.width != target_w || cur.height != target_h) {
    const double remaining = factor / applied;
    const double sigma = 0.5 * std::sqrt(std::max(0.0, remaining * remaining - 1.0));
    cur = detail::resize_sampled(detail::gaussian_smooth(cur, sigma), target_w,
                                 target_h, remaining, remaining,
                                 spacing_um * factor);
  }
  cur.spacing_um = spacing_um * factor;
  out.image = std::move(cur);
  out.downsample = factor;
  return out;
}

void render_overlay(const RgbImage &image, const std::vector<OverlayBox> &boxes,
                    const std::string &path) {
  RgbImage canvas = image;
  auto put = [&](int x, int y, const std::array<std::uint8_t, 3> &c) {
    if (x < 0 || y < 0 || x >= canvas.width || y >= canvas.height) return;
    canvas.set_pixel(x, y, c[0] / 255.0f, c[1] / 255.0f, c[2] / 255.0f);
  };
  for (const auto &ob : boxes) {
    const int x0 = static_cast<int>(std::llround(ob.box.x_min));
    const int y0 = static_cast<int>(std::llround(ob.box.y_min));
    const int x1 = static_cast<int>(std::llround(ob.box.x_max));
    const int y1 = static_cast<int>(std::llround(ob.box.y_max));
    for (int inset = 0; inset < 2; ++inset) { // 2 px stroke
      const int xa = x0 + inset, xb = x1 - inset;
      const int ya = y0 + inset, yb = y1 - inset;
      for (int x = xa; x <= xb; ++x) {
        put(x, ya, ob.color);
        put(x, yb, ob.color);
      }
      for (int y = ya; y <= yb; ++y) {
        put(xa, y, ob.color);
        put(xb, y, ob.color);
      }
    }
  }
  save_rgb_png(canvas, path);
}

namespace {

void write_refine_trace_csv(const RefineResult &refine, const std::string &path) {
  std::ofstream out(path);
  if (!out) throw WriteError("cannot open for writing: " + path);
  out << "level,iteration,metric,tx,ty,rotation,scale_x,scale_y,shear\n";
  for (const auto &row : refine.detail) {
    out << row.level << "," << row.iteration << "," << row.metric;
    out << "," << row.params[0] << "," << row.params[1] << "," << row.params[2]
        << "," << (1.0 + row.params[3]) << "," << (1.0 + row.params[4]) << ","
        << row.params[5] << "\n";
  }
}

} // namespace

RunOutputs run_pipeline(const SeriesManifest &manifest,
                        const PipelineConfig &cfg,
                        const std::filesystem::path &out_dir) {
  validate_config(cfg);
  if (manifest.sections.empty()) throw EmptySeries("manifest has no sections");
  fs::create_directories(out_dir);

  const auto t_start = std::chrono::steady_clock::now();
  const int count = static_cast<int>(manifest.sections.size());

  std::vector<PreprocessedSection> prep(count);
  for (int t = 0; t < count; ++t) {
    const auto &section = manifest.sections[t];
    prep[t] = preprocess(load_rgb(section.image_path), section.spacing_um,
                         cfg.preprocess, cfg.working_max_dim);
  }
  const double ms_preprocess = elapsed_ms(t_start);

  const auto t_pairs = std::chrono::steady_clock::now();
  const int pair_count = count - 1;
  std::vector<PairResult> pairs(std::max(pair_count, 0));
  parallel_for(pair_count, cfg.worker_count, [&](int t) {
    PairConfig pc;
    pc.features = cfg.features;
    pc.refine = cfg.refine;
    pc.method = cfg.method;
    pc.keep_stage1 = cfg.emit_traces;
    pc.features.seed = detail::mix64(cfg.seed, 0x9A17 + static_cast<std::uint64_t>(t));
    try {
      pairs[t] = register_pair(prep[t].image, prep[t + 1].image, pc);
    } catch (const Error &e) {
      pairs[t].transform = Affine2D::identity();
      pairs[t].diagnostics.method = to_string(cfg.method);
      pairs[t].diagnostics.used_identity_fallback = true;
      pairs[t].diagnostics.note = e.what();
    }
  });
  const double ms_pairs = elapsed_ms(t_pairs);

  std::vector<std::string> ids;
  std::vector<Affine2D> transforms;
  for (const auto &s : manifest.sections) ids.push_back(s.section_id);
  for (const auto &p : pairs) transforms.push_back(p.transform);

  RunOutputs outputs;
  outputs.output_dir = out_dir;
  outputs.registration = assemble_series(std::move(ids), std::move(transforms));
  for (const auto &p : pairs) {
    outputs.registration.pair_diagnostics.push_back(p.diagnostics);
    if (p.diagnostics.used_identity_fallback) ++outputs.fallback_count;
  }
  for (int t = 0; t < count; ++t) {
    outputs.registration.downsample.push_back(prep[t].downsample);
    outputs.registration.spacing_um.push_back(prep[t].spacing_um_annotation);
  }
  save_series(outputs.registration, (out_dir / "registration.json").string());

  const SeriesRegistration &reg = outputs.registration;
  const int mid = reg.middle_index;

  std::vector<GlomerulusTrack> tracks;
  if (!manifest.annotations_path.empty()) {
    tracks = load_annotations_csv(manifest.annotations_path,
                                  reg.section_ids, manifest.case_id);
  }

  if (cfg.emit_warped || cfg.emit_overlays) {
    const int mid_w = prep[mid].image.width;
    const int mid_h = prep[mid].image.height;
    for (int t = 0; t < count; ++t) {
      const ImageGrid warped =
          warp_image(reg.global_transforms[t], prep[t].image, mid_w, mid_h);
      if (cfg.emit_warped) {
        save_gray_png(warped, (out_dir / ("warped_" + reg.section_ids[t] + ".png"))
                                  .string());
      }
      if (cfg.emit_overlays && !tracks.empty()) {
        std::vector<OverlayBox> overlay;
        for (const auto &track : tracks) {
          const auto mid_box = track.boxes.find(mid);
          if (mid_box == track.boxes.end()) continue;
          // middle-frame reference box in yellow
          overlay.push_back(
              {{mid_box->second.x_min / reg.downsample_of(mid),
                mid_box->second.y_min / reg.downsample_of(mid),
                mid_box->second.x_max / reg.downsample_of(mid),
                mid_box->second.y_max / reg.downsample_of(mid)},
               {255, 255, 0}});
          if (t == mid) continue;
          const auto box = track.boxes.find(t);
          if (box == track.boxes.end()) continue;
          const double ds = reg.downsample_of(t);
          const BoundingBox working{box->second.x_min / ds, box->second.y_min / ds,
                                    box->second.x_max / ds, box->second.y_max / ds};
          // registered position of the same glomerulus in green
          overlay.push_back(
              {transform_box(reg.global_transforms[t], working), {0, 200, 0}});
        }
        render_overlay(to_rgb(warped), overlay,
                       (out_dir / ("overlay_" + reg.section_ids[t] + ".png"))
                           .string());
      }
    }
  }

  if (cfg.emit_traces) {
    for (int t = 0; t < pair_count; ++t) {
      char name[40];
      if (!pairs[t].refine.detail.empty()) {
        std::snprintf(name, sizeof(name), "trace_pair_%03d.csv", t);
        write_refine_trace_csv(pairs[t].refine, (out_dir / name).string());
      }
      if (pairs[t].stage1) {
        std::snprintf(name, sizeof(name), "stage1_pair_%03d", t);
        dump_stage1_diagnostics(prep[t].image, prep[t + 1].image,
                                *pairs[t].stage1, (out_dir / name).string());
      }
    }
  }

  if (!tracks.empty()) {
    outputs.metrics = evaluate_series(tracks, reg, reg.spacing_of(mid));
    write_metrics_csv(*outputs.metrics, (out_dir / "metrics_rows.csv").string());
    std::ofstream summary(out_dir / "metrics_summary.json");
    if (!summary) throw WriteError("cannot write metrics_summary.json");
    summary << metrics_summary_json(*outputs.metrics, to_string(cfg.method)).dump(2)
            << "\n";
  }

  nlohmann::json pair_summaries = nlohmann::json::array();
  for (int t = 0; t < pair_count; ++t) {
    const auto &d = pairs[t].diagnostics;
    pair_summaries.push_back({{"pair", t},
                              {"stage1_ok", d.stage1_ok},
                              {"used_identity_fallback", d.used_identity_fallback},
                              {"inlier_count", d.inlier_count},
                              {"final_metric", d.final_metric},
                              {"note", d.note}});
  }
  nlohmann::json summary{{"case_id", manifest.case_id},
                         {"sections", count},
                         {"middle_index", mid},
                         {"config", config_to_json(cfg)},
                         {"fallback_count", outputs.fallback_count},
                         {"pairs", pair_summaries},
                         {"timings_ms",
                          {{"preprocess", ms_preprocess},
                           {"pairwise_registration", ms_pairs},
                           {"total", elapsed_ms(t_start)}}}};
  std::ofstream out(out_dir / "run_summary.json");
  if (!out) throw WriteError("cannot write run_summary.json");
  out << summary.dump(2) << "\n";

  return outputs;
}

} // namespace serialreg
