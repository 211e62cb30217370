#include "serialreg/synthetic.hpp"

#include "detail/rng.hpp"

#include <json.hpp>

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>

namespace serialreg {

namespace {

using detail::mix64;

double lattice01(std::uint64_t seed, long long xi, long long yi) {
  const std::uint64_t h =
      mix64(mix64(seed, static_cast<std::uint64_t>(xi)) ^
            mix64(static_cast<std::uint64_t>(yi) * 0xC2B2AE3D27D4EB4FULL));
  return static_cast<double>(h >> 11) * 0x1.0p-53;
}

double smoothstep01(double t) {
  t = std::clamp(t, 0.0, 1.0);
  return t * t * (3.0 - 2.0 * t);
}

/// Bilinear lattice noise in [0,1), C1-smooth, pure in (seed, x, y).
double value_noise(std::uint64_t seed, double x, double y, double cell) {
  const double gx = x / cell;
  const double gy = y / cell;
  const double fxi = std::floor(gx);
  const double fyi = std::floor(gy);
  const long long xi = static_cast<long long>(fxi);
  const long long yi = static_cast<long long>(fyi);
  const double u = smoothstep01(gx - fxi);
  const double v = smoothstep01(gy - fyi);
  const double v00 = lattice01(seed, xi, yi);
  const double v10 = lattice01(seed, xi + 1, yi);
  const double v01 = lattice01(seed, xi, yi + 1);
  const double v11 = lattice01(seed, xi + 1, yi + 1);
  const double top = v00 + u * (v10 - v00);
  const double bot = v01 + u * (v11 - v01);
  return top + v * (bot - top);
}

double fbm3(std::uint64_t seed, double x, double y, double cell) {
  return 0.5 * value_noise(seed, x, y, cell) +
         0.3 * value_noise(seed + 1, x, y, cell * 0.5) +
         0.2 * value_noise(seed + 2, x, y, cell * 0.25);
}

struct Blob {
  double cx = 0, cy = 0, r = 0;
  std::uint64_t tex_seed = 0;
};

// Analytic scene evaluated in section-0 coordinates; sections are rendered by
// sampling it through the cumulative planted transforms, so no resampling
// blur accumulates along the series.
struct Scene {
  PhantomSpec spec;
  double strip_cx = 0, strip_cy = 0;
  double strip_half_w = 0, strip_half_h = 0;
  double edge_soft = 6.0;
  std::vector<Blob> blobs;
  std::uint64_t s_edge = 0, s_base = 0, s_dots = 0, s_bg = 0;

  double density(double x, double y) const {
    const double bg =
        0.03 + spec.background_amplitude * value_noise(s_bg, x, y, 16.0);
    const double wob_y = 0.80 + 0.25 * value_noise(s_edge, x, 0.0, 47.0);
    const double wob_x = 0.90 + 0.12 * value_noise(s_edge + 7, 0.0, y, 47.0);
    const double dy = strip_half_h * wob_y - std::abs(y - strip_cy);
    const double dx = strip_half_w * wob_x - std::abs(x - strip_cx);
    const double mask =
        smoothstep01(dy / edge_soft) * smoothstep01(dx / edge_soft);
    if (mask <= 0.0) return std::clamp(bg, 0.0, 1.0);

    double tissue = 0.32 + 0.22 * fbm3(s_base, x, y, 26.0);
    const double dv = value_noise(s_dots, x, y, 7.0);
    if (dv > 0.60) tissue += 0.36 * smoothstep01((dv - 0.60) / 0.12);
    for (const auto &b : blobs) {
      const double ddx = x - b.cx, ddy = y - b.cy;
      const double d2 = ddx * ddx + ddy * ddy;
      if (d2 >= b.r * b.r) continue;
      const double t = std::sqrt(d2) / b.r;
      const double bv =
          (0.93 - 0.30 * t) * (0.80 + 0.20 * value_noise(b.tex_seed, x, y, 9.0));
      const double edge = smoothstep01((1.0 - t) / 0.15);
      tissue = std::max(tissue, tissue + (bv - tissue) * edge);
    }
    tissue = std::min(tissue, 1.0);
    return std::clamp(bg + (tissue - bg) * mask, 0.0, 1.0);
  }
};

Scene build_scene(const PhantomSpec &spec) {
  if (spec.width <= 0 || spec.height <= 0 || spec.blob_count < 0) {
    throw Error("invalid phantom spec");
  }
  Scene scene;
  scene.spec = spec;
  scene.strip_cx = 0.5 * spec.width;
  scene.strip_cy = 0.5 * spec.height;
  if (spec.elongated) {
    scene.strip_half_w = 0.42 * spec.width;
    scene.strip_half_h = 0.22 * spec.height;
  } else {
    scene.strip_half_w = 0.38 * spec.width;
    scene.strip_half_h = 0.38 * spec.height;
  }
  scene.s_edge = mix64(spec.seed, 11);
  scene.s_base = mix64(spec.seed, 22);
  scene.s_dots = mix64(spec.seed, 33);
  scene.s_bg = mix64(spec.seed, 44);

  detail::Rng rng(mix64(spec.seed, 55));
  const double min_extent = std::min(scene.strip_half_w, scene.strip_half_h);
  for (int i = 0; i < spec.blob_count; ++i) {
    double r = rng.uniform(0.45, 0.62) * min_extent;
    Blob blob;
    bool placed = false;
    for (int attempt = 0; attempt < 300 && !placed; ++attempt) {
      const double span_x = std::max(1.0, scene.strip_half_w * 0.80 - r);
      const double span_y = std::max(1.0, scene.strip_half_h * 0.78 - r);
      blob.cx = scene.strip_cx + rng.uniform(-span_x, span_x);
      blob.cy = scene.strip_cy + rng.uniform(-span_y, span_y);
      blob.r = r;
      placed = true;
      for (const auto &other : scene.blobs) {
        const double gap =
            std::hypot(blob.cx - other.cx, blob.cy - other.cy) -
            (blob.r + other.r);
        if (gap < 12.0) {
          placed = false;
          break;
        }
      }
      if (!placed && attempt % 60 == 59) r *= 0.9; // crowded, shrink
    }
    if (!placed) continue; // give up on this blob, keep determinism
    blob.tex_seed = mix64(spec.seed, 100 + i);
    scene.blobs.push_back(blob);
  }
  return scene;
}

} // namespace

double StainProfile::apply_transfer(double v) const {
  const double c = std::clamp(v, 0.0, 1.0);
  return transfer_lo + (transfer_hi - transfer_lo) * std::pow(c, gamma);
}

StainProfile stain_profile(const std::string &name) {
  StainProfile p;
  p.name = name;
  p.transfer_lo = 0.02;
  p.transfer_hi = 0.95;
  if (name == "H&E") {
    p.gamma = 1.0;
    p.absorb = {0.25, 0.65, 0.35};
  } else if (name == "PAS") {
    p.gamma = 0.80;
    p.absorb = {0.20, 0.70, 0.30};
  } else if (name == "JMS") {
    p.gamma = 1.30;
    p.absorb = {0.75, 0.80, 0.85};
  } else if (name == "CD45") {
    p.gamma = 1.10;
    p.absorb = {0.35, 0.55, 0.75};
  } else if (name == "C4d") {
    p.gamma = 0.90;
    p.absorb = {0.30, 0.50, 0.70};
  } else if (name == "EVG") {
    p.gamma = 1.20;
    p.absorb = {0.70, 0.65, 0.40};
  } else if (name == "PV") {
    p.gamma = 1.05;
    p.absorb = {0.32, 0.52, 0.72};
  } else if (name == "MSB") {
    p.gamma = 0.95;
    p.absorb = {0.25, 0.60, 0.55};
  } else {
    p.name = "other";
    p.gamma = 1.0;
    p.transfer_lo = 0.0;
    p.transfer_hi = 1.0;
    p.absorb = {0.70, 0.70, 0.70};
  }
  return p;
}

Phantom generate_phantom(const PhantomSpec &spec) {
  const Scene scene = build_scene(spec);
  Phantom out;
  out.image = make_image(spec.width, spec.height, spec.spacing_um);
  for (int y = 0; y < spec.height; ++y) {
    for (int x = 0; x < spec.width; ++x) {
      out.image.at(x, y) = static_cast<float>(scene.density(x, y));
    }
  }
  for (const auto &b : scene.blobs) {
    out.blob_boxes.push_back({b.cx - b.r, b.cy - b.r, b.cx + b.r, b.cy + b.r});
  }
  return out;
}

namespace {

struct OcclusionPatch {
  double cx = 0, cy = 0, r = 0;
};

std::vector<OcclusionPatch> place_occlusions(const Scene &scene,
                                             const Affine2D &to_section,
                                             double fraction,
                                             std::uint64_t seed) {
  std::vector<OcclusionPatch> patches;
  if (fraction <= 0.0) return patches;
  // tissue strip bounding region in section coordinates
  BoundingBox strip{scene.strip_cx - scene.strip_half_w,
                    scene.strip_cy - scene.strip_half_h,
                    scene.strip_cx + scene.strip_half_w,
                    scene.strip_cy + scene.strip_half_h};
  const BoundingBox region = transform_box(to_section, strip);
  const double strip_area =
      4.0 * scene.strip_half_w * scene.strip_half_h;
  detail::Rng rng(seed);
  double covered = 0.0;
  while (covered < fraction * strip_area && patches.size() < 64) {
    OcclusionPatch p;
    p.r = rng.uniform(0.5, 1.0) * scene.strip_half_h;
    p.cx = rng.uniform(region.x_min, region.x_max);
    p.cy = rng.uniform(region.y_min, region.y_max);
    patches.push_back(p);
    covered += M_PI * p.r * p.r;
  }
  return patches;
}

} // namespace

SyntheticSeries make_series(const PhantomSpec &spec, int section_count,
                            const std::vector<Affine2D> &planted,
                            const SeriesArtifacts &artifacts) {
  if (section_count < 1) throw EmptySeries("section_count must be >= 1");
  if (static_cast<int>(planted.size()) != section_count - 1) {
    throw LengthMismatch("need T-1 planted transforms");
  }
  if (artifacts.occlusion_fraction < 0.0 || artifacts.occlusion_fraction > 0.5) {
    throw Error("occlusion_fraction must lie in [0, 0.5]");
  }
  if (!artifacts.stains.empty() &&
      static_cast<int>(artifacts.stains.size()) != section_count) {
    throw LengthMismatch("stains must be empty or one per section");
  }

  const Scene scene = build_scene(spec);
  SyntheticSeries series;
  series.spacing_um = spec.spacing_um;
  series.pair_transforms = planted;
  series.stains = artifacts.stains;
  if (series.stains.empty()) {
    series.stains.assign(section_count, "other");
  }

  // cumulative maps: section t coordinates -> section 0 coordinates
  std::vector<Affine2D> cumulative(section_count);
  for (int t = 1; t < section_count; ++t) {
    cumulative[t] = compose(planted[t - 1], cumulative[t - 1]);
  }

  // ground-truth boxes follow the planted transforms exactly
  series.boxes.resize(section_count);
  for (const auto &b : scene.blobs) {
    series.boxes[0].push_back({b.cx - b.r, b.cy - b.r, b.cx + b.r, b.cy + b.r});
  }
  for (int t = 1; t < section_count; ++t) {
    const Affine2D back = invert(planted[t - 1]); // t-1 coords -> t coords
    for (const auto &box : series.boxes[t - 1]) {
      series.boxes[t].push_back(transform_box(back, box));
    }
  }

  for (int t = 0; t < section_count; ++t) {
    const StainProfile prof = stain_profile(series.stains[t]);
    const auto patches =
        place_occlusions(scene, invert(cumulative[t]),
                         artifacts.occlusion_fraction,
                         mix64(spec.seed, 0xACC0 + static_cast<std::uint64_t>(t)));
    const std::uint64_t occ_tex = mix64(spec.seed, 0xFACE + t);

    RgbImage img = make_rgb(spec.width, spec.height);
    const auto &c = cumulative[t].m;
    for (int y = 0; y < spec.height; ++y) {
      for (int x = 0; x < spec.width; ++x) {
        bool occluded = false;
        for (const auto &p : patches) {
          const double dx = x - p.cx, dy = y - p.cy;
          if (dx * dx + dy * dy < p.r * p.r) {
            occluded = true;
            break;
          }
        }
        float r, g, b;
        if (occluded) {
          const float glass = static_cast<float>(
              0.96 - 0.05 * value_noise(occ_tex, x, y, 11.0));
          r = g = b = glass;
        } else {
          const double qx = c[0] * x + c[1] * y + c[2];
          const double qy = c[3] * x + c[4] * y + c[5];
          const double v = prof.apply_transfer(scene.density(qx, qy));
          r = static_cast<float>(1.0 - v * prof.absorb[0]);
          g = static_cast<float>(1.0 - v * prof.absorb[1]);
          b = static_cast<float>(1.0 - v * prof.absorb[2]);
        }
        img.set_pixel(x, y, r, g, b);
      }
    }
    if (artifacts.noise_sigma > 0.0) {
      detail::Rng noise(mix64(spec.seed, 0x4015E + static_cast<std::uint64_t>(t)));
      for (auto &v : img.data) {
        v = static_cast<float>(std::clamp(
            v + artifacts.noise_sigma * noise.normal(), 0.0, 1.0));
      }
    }
    series.sections.push_back(std::move(img));
  }
  return series;
}

void write_series_dataset(const SyntheticSeries &series,
                          const std::string &case_id,
                          const std::string &out_dir) {
  namespace fs = std::filesystem;
  fs::create_directories(out_dir);
  const int count = static_cast<int>(series.sections.size());

  std::vector<std::string> section_ids;
  nlohmann::json sections = nlohmann::json::array();
  for (int t = 0; t < count; ++t) {
    char name[16];
    std::snprintf(name, sizeof(name), "s%03d", t);
    section_ids.emplace_back(name);
    const std::string file = std::string(name) + ".png";
    save_rgb_png(series.sections[t], (fs::path(out_dir) / file).string());
    sections.push_back({{"section_id", name},
                        {"image_path", file},
                        {"stain", series.stains[t]},
                        {"spacing_um", series.spacing_um}});
  }

  nlohmann::json manifest{{"case_id", case_id},
                          {"sections", sections},
                          {"annotations_path", "annotations.csv"}};
  {
    std::ofstream out(fs::path(out_dir) / "manifest.json");
    if (!out) throw WriteError("cannot write manifest.json");
    out << manifest.dump(2) << "\n";
  }

  std::vector<GlomerulusTrack> tracks;
  const std::size_t blobs = series.boxes.empty() ? 0 : series.boxes[0].size();
  for (std::size_t i = 0; i < blobs; ++i) {
    GlomerulusTrack track;
    char gid[32];
    std::snprintf(gid, sizeof(gid), "g%03d", static_cast<int>(i));
    track.glomerulus_id = gid;
    for (int t = 0; t < count; ++t) track.boxes[t] = series.boxes[t][i];
    tracks.push_back(std::move(track));
  }
  write_annotations_csv((fs::path(out_dir) / "annotations.csv").string(),
                        case_id, section_ids, tracks);

  nlohmann::json gt;
  gt["spacing_um"] = series.spacing_um;
  gt["pair_transforms"] = nlohmann::json::array();
  for (const auto &t : series.pair_transforms) {
    gt["pair_transforms"].push_back(affine_to_json(t));
  }
  {
    std::ofstream out(fs::path(out_dir) / "ground_truth.json");
    if (!out) throw WriteError("cannot write ground_truth.json");
    out << gt.dump(2) << "\n";
  }
}

} // namespace serialreg
