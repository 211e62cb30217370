#pragma once

#include "serialreg/geometry.hpp"
#include "serialreg/image_io.hpp"
#include "serialreg/metrics.hpp"

#include <array>
#include <cstdint>
#include <string>
#include <vector>

namespace serialreg {

struct PhantomSpec {
  std::uint64_t seed = 0;
  int width = 1024;
  int height = 256;
  int blob_count = 3;                // glomerulus-like discs with texture
  double background_amplitude = 0.04;
  bool elongated = true;             // needle-biopsy strip, aspect >= 4:1
  double spacing_um = 1.0;
};

/// Monotone intensity transfer plus an RGB absorption triple; stands in for a
/// histological stain when rendering phantom sections.
struct StainProfile {
  std::string name = "other";
  double gamma = 1.0; // transfer v -> lo + (hi - lo) * v^gamma, strictly monotone
  double transfer_lo = 0.0;
  double transfer_hi = 1.0;
  std::array<double, 3> absorb{0.70, 0.70, 0.70};

  double apply_transfer(double v) const;
};

/// Built-in profile for a stain label (C4d, H&E, CD45, JMS, PAS, EVG, PV,
/// MSB); anything else maps to a neutral "other" profile.
StainProfile stain_profile(const std::string &name);

struct Phantom {
  ImageGrid image;
  std::vector<BoundingBox> blob_boxes; // exact disc bounds, one per blob
};

/// Deterministic per seed. Tissue is a textured region (a thin strip in
/// elongated mode) carrying bright speckles and blob_count disc blobs; the
/// returned boxes bound the discs exactly.
Phantom generate_phantom(const PhantomSpec &spec);

struct SeriesArtifacts {
  double occlusion_fraction = 0.0; // in [0, 0.5], fraction of tissue covered
  double noise_sigma = 0.0;        // additive Gaussian on rendered RGB
  std::vector<std::string> stains; // per section; empty = all "other"
};

struct SyntheticSeries {
  std::vector<RgbImage> sections;
  std::vector<Affine2D> pair_transforms; // ground truth, maps t+1 -> t coords
  std::vector<std::vector<BoundingBox>> boxes; // boxes[t][blob]
  std::vector<std::string> stains;
  double spacing_um = 1.0;
};

/// Renders T sections of one phantom geometry. planted[t] maps section t+1
/// coordinates into section t (the transform a pairwise registration should
/// recover). Occlusion and noise touch pixels only; the emitted ground-truth
/// boxes follow the planted transforms exactly.
SyntheticSeries make_series(const PhantomSpec &spec, int section_count,
                            const std::vector<Affine2D> &planted,
                            const SeriesArtifacts &artifacts);

/// Writes images, manifest.json, annotations.csv and ground_truth.json into
/// `out_dir`, ready for the register CLI.
void write_series_dataset(const SyntheticSeries &series,
                          const std::string &case_id,
                          const std::string &out_dir);

} // namespace serialreg
