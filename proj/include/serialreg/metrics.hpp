#pragma once

#include "serialreg/geometry.hpp"
#include "serialreg/series.hpp"

#include <map>
#include <string>
#include <vector>

namespace serialreg {

struct BoundingBox {
  double x_min = 0, y_min = 0, x_max = 0, y_max = 0;

  double width() const { return x_max - x_min; }
  double height() const { return y_max - y_min; }
  double area() const { return width() * height(); }
  Point2D center() const {
    return {0.5 * (x_min + x_max), 0.5 * (y_min + y_max)};
  }
  bool valid() const { return x_min < x_max && y_min < y_max; }
};

struct BoundingCircle {
  double cx = 0, cy = 0, r = 0;
};

struct GlomerulusTrack {
  std::string glomerulus_id;
  std::map<int, BoundingBox> boxes; // keyed by section index
};

/// Maps the four corners through the affine and returns the axis-aligned hull.
BoundingBox transform_box(const Affine2D &a, const BoundingBox &box);

/// Euclidean distance between box centers, scaled to microns.
double center_distance(const BoundingBox &a, const BoundingBox &b,
                       double spacing_um);

double box_iou(const BoundingBox &a, const BoundingBox &b);

/// Largest circle contained in the box: centered, radius min(w, h)/2.
BoundingCircle inscribed_circle(const BoundingBox &box);

/// Closed-form circle-circle IoU (lens intersection with containment and
/// disjoint branches).
double circle_iou(const BoundingCircle &a, const BoundingCircle &b);

struct MetricsRow {
  std::string glomerulus_id;
  int section_index = 0;
  std::string section_id;
  double distance_um = 0;
  double box_iou = 0;
  double circle_iou = 0;
};

struct MetricsReport {
  std::vector<MetricsRow> rows;
  double distance_mean_um = 0;
  double distance_median_um = 0;
  double box_iou_mean = 0;
  double circle_iou_mean = 0;
  int tracks_evaluated = 0;
  int tracks_skipped = 0; // missing a middle-section box
};

/// For every non-middle box of each track: map through the section's global
/// transform (rescaling annotation <-> working resolution via the recorded
/// downsample factors) and compare against the track's middle-section box.
/// `spacing_um` is the fallback microns-per-annotation-pixel when the
/// registration does not carry per-section spacing. Tracks without a
/// middle-section box are skipped; throws NoMiddleAnnotation if that leaves
/// nothing to evaluate.
MetricsReport evaluate_series(const std::vector<GlomerulusTrack> &tracks,
                              const SeriesRegistration &reg,
                              double spacing_um = 1.0);

/// CSV columns: case_id, section_id, glomerulus_id, x_min, y_min, x_max,
/// y_max (pixels at annotation resolution). Unknown section ids throw
/// ParseError; `case_filter` empty means accept all cases.
std::vector<GlomerulusTrack>
load_annotations_csv(const std::string &path,
                     const std::vector<std::string> &section_ids,
                     const std::string &case_filter = "");

void write_annotations_csv(const std::string &path, const std::string &case_id,
                           const std::vector<std::string> &section_ids,
                           const std::vector<GlomerulusTrack> &tracks);

void write_metrics_csv(const MetricsReport &report, const std::string &path);

/// Summary with the four aggregates: Distance (Mean), Distance (Median),
/// Box IoU (Mean), Circle IoU (Mean).
nlohmann::json metrics_summary_json(const MetricsReport &report,
                                    const std::string &method_label);

} // namespace serialreg
