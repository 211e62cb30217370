#pragma once

#include "serialreg/image_io.hpp"
#include "serialreg/metrics.hpp"
#include "serialreg/series.hpp"

#include <json.hpp>

#include <array>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

namespace serialreg {

struct SectionEntry {
  std::string section_id;
  std::string image_path; // resolved against the manifest's directory
  std::string stain = "other";
  double spacing_um = 1.0; // microns per pixel at the raw image resolution
};

struct SeriesManifest {
  std::string case_id;
  std::vector<SectionEntry> sections; // physical sectioning order
  std::string annotations_path;       // empty = no annotations
};

/// Parses and validates a manifest: >= 1 section, unique section ids, image
/// files present with a recognizable raster header.
SeriesManifest load_manifest(const std::string &path);

struct PreprocessOptions {
  std::array<double, 3> luminance_weights{0.299, 0.587, 0.114};
  bool invert = true; // histology is dark-on-white; make tissue bright
  double normalize_lo_percentile = 1.0;
  double normalize_hi_percentile = 99.0;
};

struct PipelineConfig {
  int working_max_dim = 1024; // >= 64
  PreprocessOptions preprocess;
  FeatureConfig features;
  RefineConfig refine;
  RegistrationMethod method = RegistrationMethod::two_stage;
  bool emit_warped = false;
  bool emit_overlays = false;
  bool emit_traces = false;
  std::uint64_t seed = 0;
  int worker_count = 1;
};

void validate_config(const PipelineConfig &cfg);
PipelineConfig config_from_json(const nlohmann::json &j);
nlohmann::json config_to_json(const PipelineConfig &cfg);

struct PreprocessedSection {
  ImageGrid image;       // working resolution, intensities in [0,1]
  double downsample = 1; // raw (annotation) pixels per working pixel
  double spacing_um_annotation = 1;
  int raw_width = 0;
  int raw_height = 0;
};

/// Luminance conversion, optional inversion, percentile normalization to
/// [0,1], then downsampling so max(width, height) <= working_max_dim with the
/// spacing rescaled by the same factor.
PreprocessedSection preprocess(const RgbImage &raw, double spacing_um,
                               const PreprocessOptions &opts,
                               int working_max_dim);

struct OverlayBox {
  BoundingBox box;
  std::array<std::uint8_t, 3> color{255, 255, 0};
};

/// Strokes 2 px rectangle outlines (clipped to the image) and writes a PNG.
void render_overlay(const RgbImage &image, const std::vector<OverlayBox> &boxes,
                    const std::string &path);

struct RunOutputs {
  SeriesRegistration registration;
  std::optional<MetricsReport> metrics;
  int fallback_count = 0; // pairs that needed an identity fallback
  std::filesystem::path output_dir;
};

/// The full run: preprocess, register all consecutive pairs under the
/// selected method (in parallel across pairs), propagate to the middle
/// section, write registration.json / run_summary.json and the optional
/// warped images, overlays, traces and metrics. Deterministic for a given
/// (manifest contents, config, seed), independent of worker_count.
RunOutputs run_pipeline(const SeriesManifest &manifest,
                        const PipelineConfig &cfg,
                        const std::filesystem::path &out_dir);

} // namespace serialreg
