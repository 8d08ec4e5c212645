#pragma once

#include <cstdint>
#include <vector>

#include "lumbarseg/dataset/volume.hpp"

namespace lumbarseg::data {

struct PatchPair {
  Extents start{0, 0, 0};  // in the symmetrically padded frame
  Volume image;
  LabelVolume labels;
};

// Leading zero padding applied along each axis when the volume is smaller
// than the patch: (patch - extent) / 2, else 0.
Extents symmetric_padding(const Extents& volume, const Extents& patch);

// Patch of `grid` starting at `start` in the padded frame; voxels outside the
// grid are zero.
template <typename T>
Grid<T> extract_patch(const Grid<T>& grid, const Extents& start, const Extents& patch,
                      const Extents& padding) {
  Grid<T> out(patch, T{}, grid.spacing,
              grid.physical(Vec3(static_cast<double>(start[0] - padding[0]),
                                 static_cast<double>(start[1] - padding[1]),
                                 static_cast<double>(start[2] - padding[2]))));
  for (Index z = 0; z < patch[0]; ++z) {
    const Index sz = start[0] - padding[0] + z;
    if (sz < 0 || sz >= grid.extents[0]) continue;
    for (Index y = 0; y < patch[1]; ++y) {
      const Index sy = start[1] - padding[1] + y;
      if (sy < 0 || sy >= grid.extents[1]) continue;
      for (Index x = 0; x < patch[2]; ++x) {
        const Index sx = start[2] - padding[2] + x;
        if (sx < 0 || sx >= grid.extents[2]) continue;
        out(z, y, x) = grid(sz, sy, sx);
      }
    }
  }
  return out;
}

// `count` aligned patches at uniform random positions within the (padded)
// volume, returned in a seed-determined shuffled order.
std::vector<PatchPair> sample_training_patches(const Volume& volume, const LabelVolume& labels,
                                               const Extents& patch, int count, std::uint64_t seed);

}  // namespace lumbarseg::data
