#pragma once

#include <cstdint>
#include <utility>

#include "lumbarseg/dataset/volume.hpp"

namespace lumbarseg::data {

struct GrayAugmentOptions {
  double scale_min = 0.9, scale_max = 1.1;
  double shift_min = -0.1, shift_max = 0.1;
};

// v -> scale * v + shift for every voxel.
Volume apply_intensity_affine(const Volume& volume, double scale, double shift);

// Draws scale and shift uniformly from the option ranges.
Volume gray_value_augment(const Volume& volume, const GrayAugmentOptions& options,
                          std::uint64_t seed);

// Displacements on a coarse control lattice (one node every `grid_spacing`
// voxels, covering the volume). Dense displacement is the trilinear
// interpolation of the lattice.
struct ControlField {
  Extents volume_extents{0, 0, 0};
  Index grid_spacing = 8;
  Extents nodes{0, 0, 0};
  std::vector<Vec3> displacement;  // voxels, (z, y, x) order, node-major

  Vec3 at(const Vec3& voxel) const;
  static ControlField constant(const Extents& volume_extents, Index grid_spacing, const Vec3& d);
};

struct ElasticOptions {
  Index grid_spacing = 8;
  double amplitude = 2.0;  // each component uniform in [-amplitude, amplitude]
};

ControlField random_control_field(const Extents& extents, const ElasticOptions& options,
                                  std::uint64_t seed);

// out(p) = in(p + u(p)). Image: trilinear; labels: nearest neighbour.
// Sample positions outside the grid are clamped to the border.
std::pair<Volume, LabelVolume> apply_deformation(const Volume& volume, const LabelVolume& labels,
                                                 const ControlField& field);

std::pair<Volume, LabelVolume> elastic_deform(const Volume& volume, const LabelVolume& labels,
                                              const ElasticOptions& options, std::uint64_t seed);

// Each corner coordinate moves by a uniform offset within +-fraction of the
// box size along that axis; corners are re-sorted afterwards.
BoundingBox3D roi_augment(const BoundingBox3D& box, double fraction, std::uint64_t seed);

}  // namespace lumbarseg::data
