#include "serialreg/metrics.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <fstream>
#include <sstream>

namespace serialreg {

BoundingBox transform_box(const Affine2D &a, const BoundingBox &box) {
  const Point2D corners[4] = {{box.x_min, box.y_min},
                              {box.x_max, box.y_min},
                              {box.x_min, box.y_max},
                              {box.x_max, box.y_max}};
  BoundingBox out;
  bool first = true;
  for (const auto &c : corners) {
    const Point2D q = apply_point(a, c);
    if (first) {
      out = {q.x, q.y, q.x, q.y};
      first = false;
    } else {
      out.x_min = std::min(out.x_min, q.x);
      out.y_min = std::min(out.y_min, q.y);
      out.x_max = std::max(out.x_max, q.x);
      out.y_max = std::max(out.y_max, q.y);
    }
  }
  return out;
}

double center_distance(const BoundingBox &a, const BoundingBox &b,
                       double spacing_um) {
  if (!(spacing_um > 0.0)) throw Error("spacing_um must be positive");
  const Point2D ca = a.center();
  const Point2D cb = b.center();
  return std::hypot(ca.x - cb.x, ca.y - cb.y) * spacing_um;
}

double box_iou(const BoundingBox &a, const BoundingBox &b) {
  const double ix = std::min(a.x_max, b.x_max) - std::max(a.x_min, b.x_min);
  const double iy = std::min(a.y_max, b.y_max) - std::max(a.y_min, b.y_min);
  if (ix <= 0.0 || iy <= 0.0) return 0.0;
  const double inter = ix * iy;
  const double uni = a.area() + b.area() - inter;
  return uni > 0.0 ? inter / uni : 0.0;
}

BoundingCircle inscribed_circle(const BoundingBox &box) {
  const Point2D c = box.center();
  return {c.x, c.y, 0.5 * std::min(box.width(), box.height())};
}

double circle_iou(const BoundingCircle &a, const BoundingCircle &b) {
  // canonical argument order keeps the result bitwise symmetric
  if (a.r < b.r || (a.r == b.r && (a.cx < b.cx || (a.cx == b.cx && a.cy < b.cy)))) {
    return circle_iou(b, a);
  }
  const double d = std::hypot(a.cx - b.cx, a.cy - b.cy);
  const double ra = a.r, rb = b.r;
  double inter;
  if (d >= ra + rb) {
    inter = 0.0;
  } else if (d <= std::abs(ra - rb)) {
    const double rmin = std::min(ra, rb);
    inter = M_PI * rmin * rmin;
  } else {
    // lens area from two circular segments
    const double cos_a = std::clamp((d * d + ra * ra - rb * rb) / (2 * d * ra),
                                    -1.0, 1.0);
    const double cos_b = std::clamp((d * d + rb * rb - ra * ra) / (2 * d * rb),
                                    -1.0, 1.0);
    const double kite = 0.5 * std::sqrt(std::max(
        0.0, (-d + ra + rb) * (d + ra - rb) * (d - ra + rb) * (d + ra + rb)));
    inter = ra * ra * std::acos(cos_a) + rb * rb * std::acos(cos_b) - kite;
  }
  const double uni = M_PI * ra * ra + M_PI * rb * rb - inter;
  return uni > 0.0 ? std::clamp(inter / uni, 0.0, 1.0) : 0.0;
}

namespace {

BoundingBox scale_box(const BoundingBox &box, double s) {
  return {box.x_min * s, box.y_min * s, box.x_max * s, box.y_max * s};
}

} // namespace

MetricsReport evaluate_series(const std::vector<GlomerulusTrack> &tracks,
                              const SeriesRegistration &reg,
                              double spacing_um) {
  const int count = static_cast<int>(reg.section_ids.size());
  const int mid = reg.middle_index;
  MetricsReport report;

  const double mid_spacing =
      reg.spacing_um.empty() ? spacing_um : reg.spacing_of(mid);

  for (const auto &track : tracks) {
    const auto mid_it = track.boxes.find(mid);
    if (mid_it == track.boxes.end()) {
      ++report.tracks_skipped;
      continue;
    }
    ++report.tracks_evaluated;
    const BoundingBox &middle_box = mid_it->second;
    for (const auto &[t, box] : track.boxes) {
      if (t == mid) continue;
      if (t < 0 || t >= count) {
        throw Error("track references section index out of range");
      }
      const BoundingBox working = scale_box(box, 1.0 / reg.downsample_of(t));
      const BoundingBox mapped_working =
          transform_box(reg.global_transforms[t], working);
      const BoundingBox mapped = scale_box(mapped_working, reg.downsample_of(mid));
      MetricsRow row;
      row.glomerulus_id = track.glomerulus_id;
      row.section_index = t;
      row.section_id = reg.section_ids[t];
      row.distance_um = center_distance(mapped, middle_box, mid_spacing);
      row.box_iou = box_iou(mapped, middle_box);
      row.circle_iou =
          circle_iou(inscribed_circle(mapped), inscribed_circle(middle_box));
      report.rows.push_back(std::move(row));
    }
  }

  if (report.tracks_evaluated == 0) {
    throw NoMiddleAnnotation("no track has a bounding box on the middle section");
  }

  if (!report.rows.empty()) {
    std::vector<double> distances;
    distances.reserve(report.rows.size());
    double dist_sum = 0, biou_sum = 0, ciou_sum = 0;
    for (const auto &row : report.rows) {
      distances.push_back(row.distance_um);
      dist_sum += row.distance_um;
      biou_sum += row.box_iou;
      ciou_sum += row.circle_iou;
    }
    const double n = static_cast<double>(report.rows.size());
    report.distance_mean_um = dist_sum / n;
    report.box_iou_mean = biou_sum / n;
    report.circle_iou_mean = ciou_sum / n;
    std::sort(distances.begin(), distances.end());
    const std::size_t half = distances.size() / 2;
    report.distance_median_um =
        distances.size() % 2 == 1
            ? distances[half]
            : 0.5 * (distances[half - 1] + distances[half]);
  }
  return report;
}

namespace {

std::vector<std::string> split_csv_line(const std::string &line) {
  std::vector<std::string> fields;
  std::string cur;
  for (char c : line) {
    if (c == ',') {
      fields.push_back(cur);
      cur.clear();
    } else if (c != '\r') {
      cur += c;
    }
  }
  fields.push_back(cur);
  for (auto &f : fields) {
    while (!f.empty() && (f.front() == ' ' || f.front() == '\t')) f.erase(f.begin());
    while (!f.empty() && (f.back() == ' ' || f.back() == '\t')) f.pop_back();
  }
  return fields;
}

double parse_double(const std::string &s, int line_no, const char *field) {
  double v = 0.0;
  const auto res = std::from_chars(s.data(), s.data() + s.size(), v);
  if (res.ec != std::errc() || res.ptr != s.data() + s.size()) {
    throw ParseError("annotations line " + std::to_string(line_no) +
                     ": bad value for " + field + ": '" + s + "'");
  }
  return v;
}

std::string format_double(double v) {
  char buf[32];
  const auto res = std::to_chars(buf, buf + sizeof(buf), v);
  return std::string(buf, res.ptr);
}

} // namespace

std::vector<GlomerulusTrack>
load_annotations_csv(const std::string &path,
                     const std::vector<std::string> &section_ids,
                     const std::string &case_filter) {
  std::ifstream in(path);
  if (!in) throw ParseError("cannot open annotations file: " + path);

  std::map<std::string, int> index_of;
  for (std::size_t i = 0; i < section_ids.size(); ++i) {
    index_of[section_ids[i]] = static_cast<int>(i);
  }

  std::map<std::string, GlomerulusTrack> by_id;
  std::string line;
  int line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty() || line[0] == '#') continue;
    const auto fields = split_csv_line(line);
    if (line_no == 1 && !fields.empty() && fields[0] == "case_id") continue;
    if (fields.size() != 7) {
      throw ParseError("annotations line " + std::to_string(line_no) +
                       ": expected 7 fields, got " +
                       std::to_string(fields.size()));
    }
    if (!case_filter.empty() && fields[0] != case_filter) continue;
    const auto it = index_of.find(fields[1]);
    if (it == index_of.end()) {
      throw ParseError("annotations line " + std::to_string(line_no) +
                       ": unknown section_id '" + fields[1] + "'");
    }
    BoundingBox box{parse_double(fields[3], line_no, "x_min"),
                    parse_double(fields[4], line_no, "y_min"),
                    parse_double(fields[5], line_no, "x_max"),
                    parse_double(fields[6], line_no, "y_max")};
    if (!box.valid()) {
      throw ParseError("annotations line " + std::to_string(line_no) +
                       ": degenerate bounding box");
    }
    auto &track = by_id[fields[2]];
    track.glomerulus_id = fields[2];
    track.boxes[it->second] = box;
  }
  std::vector<GlomerulusTrack> tracks;
  tracks.reserve(by_id.size());
  for (auto &[id, track] : by_id) tracks.push_back(std::move(track));
  return tracks;
}

void write_annotations_csv(const std::string &path, const std::string &case_id,
                           const std::vector<std::string> &section_ids,
                           const std::vector<GlomerulusTrack> &tracks) {
  std::ofstream out(path);
  if (!out) throw WriteError("cannot open for writing: " + path);
  out << "case_id,section_id,glomerulus_id,x_min,y_min,x_max,y_max\n";
  for (const auto &track : tracks) {
    for (const auto &[t, box] : track.boxes) {
      out << case_id << "," << section_ids[t] << "," << track.glomerulus_id
          << "," << format_double(box.x_min) << "," << format_double(box.y_min)
          << "," << format_double(box.x_max) << "," << format_double(box.y_max)
          << "\n";
    }
  }
  if (!out) throw WriteError("failed writing: " + path);
}

void write_metrics_csv(const MetricsReport &report, const std::string &path) {
  std::ofstream out(path);
  if (!out) throw WriteError("cannot open for writing: " + path);
  out << "glomerulus_id,section_index,section_id,distance_um,box_iou,circle_iou\n";
  for (const auto &row : report.rows) {
    out << row.glomerulus_id << "," << row.section_index << "," << row.section_id
        << "," << format_double(row.distance_um) << ","
        << format_double(row.box_iou) << "," << format_double(row.circle_iou)
        << "\n";
  }
  if (!out) throw WriteError("failed writing: " + path);
}

nlohmann::json metrics_summary_json(const MetricsReport &report,
                                    const std::string &method_label) {
  return nlohmann::json{{"method", method_label},
                        {"distance_mean_um", report.distance_mean_um},
                        {"distance_median_um", report.distance_median_um},
                        {"box_iou_mean", report.box_iou_mean},
                        {"circle_iou_mean", report.circle_iou_mean},
                        {"rows", report.rows.size()},
                        {"tracks_evaluated", report.tracks_evaluated},
                        {"tracks_skipped", report.tracks_skipped}};
}

} // namespace serialreg
