#pragma once

#include <vector>

#include "lumbarseg/dataset/volume.hpp"

namespace lumbarseg::loc {

using data::Vec3;

struct CornerVotes {
  std::vector<Vec3> low;   // reference + predicted d_low, voxel coordinates
  std::vector<Vec3> high;  // reference + predicted d_high
};

struct KdeOptions {
  // Per-axis bandwidth: sample std * n^(-1/7) (Scott's factor for 3D data),
  // floored at `min_bandwidth` voxels. A positive `fixed_bandwidth` overrides.
  double min_bandwidth = 1.0;
  double fixed_bandwidth = 0.0;
  // Mean-shift refinement steps after the discrete search; 0 keeps the
  // densest vote itself.
  int mean_shift_iterations = 200;
};

Vec3 scott_bandwidth(const std::vector<Vec3>& votes, const KdeOptions& options);

// Mode of the Gaussian-kernel density: the densest vote, refined by
// mean-shift. Votes are sorted first, so the result does not depend on their
// order; ties go to the lexicographically smallest vote.
Vec3 density_mode(std::vector<Vec3> votes, const KdeOptions& options);

// Mode per corner, then corners sorted per axis into a valid box (an axis that
// collapses is widened to one voxel). Throws LocalizationError on empty votes.
data::BoundingBox3D kde_aggregate(const CornerVotes& votes, const KdeOptions& options);

}  // namespace lumbarseg::loc
