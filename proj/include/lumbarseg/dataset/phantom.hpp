#pragma once

#include <cstdint>
#include <filesystem>

#include "lumbarseg/dataset/volume.hpp"
#include "lumbarseg/kv_text.hpp"

namespace lumbarseg::data {

// Synthetic spine scan. Depth index 0 is the superior end. Vertebrae are
// ellipsoids stacked along depth, labeled 1 (superior) .. vertebra_count
// (inferior), growing by a fixed step per level. Unlabeled distractor
// ellipsoids continue the stack above label 1 (smaller, dimmer) and an
// optional wide unlabeled block sits below the last vertebra.
struct PhantomSpec {
  std::uint64_t seed = 1;
  int vertebra_count = 5;
  Extents extents{96, 64, 64};
  Vec3 spacing_mm{2.0, 1.0, 1.0};
  double noise_level = 0.08;  // std-dev of additive Gaussian noise

  // Vertebra geometry in voxels. Radii of level i (0 = superior) are drawn
  // from [min, max] + i * growth.
  double depth_radius_min = 2.8, depth_radius_max = 3.0;
  double inplane_radius_min = 10.5, inplane_radius_max = 11.0;
  double depth_growth = 0.15;
  double inplane_growth = 0.8;
  double gap_min = 2.0, gap_max = 4.0;
  double vertebra_intensity = 1.0;
  double intensity_jitter = 0.1;
  double lateral_drift = 1.0;  // per-vertebra center drift in-plane

  // Field-of-view variation: depth of the first lumbar vertebra's top surface
  // and in-plane offset of the spine axis from the volume center.
  double fov_top_min = 10.0, fov_top_max = 30.0;
  double fov_inplane_jitter = 4.0;

  int distractor_count = 3;
  double distractor_scale = 0.85;  // radii relative to the vertebrae
  double distractor_intensity = 0.7;

  bool base_block = true;  // sacrum-like block below the stack
  double base_intensity = 0.8;

  double tissue_intensity = 0.25;  // soft-tissue cylinder around the spine
  double tissue_radius = 26.0;

  void validate() const;
  KvDocument to_document() const;
  static PhantomSpec from_document(const KvDocument& doc);
};

struct Phantom {
  Volume image;
  LabelVolume labels;
  BoundingBox3D box;  // tight box of the labeled voxels
};

// Pure function of the spec. Throws SpecError when the stack cannot fit.
Phantom gen_phantom(const PhantomSpec& spec);

// Writes <stem>.hdr/.raw (image), <stem>_labels.hdr/.raw and <stem>_box.txt.
void save_phantom(const Phantom& phantom, const std::filesystem::path& directory,
                  const std::string& stem);
Phantom load_phantom(const std::filesystem::path& directory, const std::string& stem);

}  // namespace lumbarseg::data
