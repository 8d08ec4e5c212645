#pragma once

#include <vector>

#include "lumbarseg/dataset/volume.hpp"

namespace lumbarseg::loc {

using data::Extents;
using data::Index;

struct CannyOptions {
  double sigma = 1.0;           // Gaussian smoothing, voxels; 0 disables
  double low_threshold = 0.05;  // gradient magnitude, intensity units per voxel
  double high_threshold = 0.15;
};

struct ReferenceVoxelSet {
  std::vector<Extents> positions;  // (z, y, x), row-major scan order
  bool constant_volume = false;    // no intensity variation at all
};

// Smoothing (separable Gaussian, replicated borders), central-difference
// gradient, non-maximum suppression along the gradient direction quantized to
// one of the 26 neighbour offsets, then hysteresis over 26-connected voxels.
// Throws ConfigError unless 0 <= low < high and sigma >= 0.
ReferenceVoxelSet canny3d(const data::Volume& volume, const CannyOptions& options);

// Gaussian-smoothed copy (double precision), exposed for tests.
std::vector<double> gaussian_smooth(const data::Volume& volume, double sigma);

}  // namespace lumbarseg::loc
