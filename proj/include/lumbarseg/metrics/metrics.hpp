#pragma once

#include <Eigen/Core>

#include <cstdint>
#include <optional>
#include <vector>

#include "lumbarseg/dataset/volume.hpp"

namespace lumbarseg::metrics {

using data::Index;
using data::LabelVolume;
using Point = Eigen::Vector3d;

struct OverlapCounts {
  Index a = 0;             // |a|
  Index b = 0;             // |b|
  Index intersection = 0;  // |a n b|
};

// Voxels equal to `label` in each volume. Throws EvaluationError when the
// extents differ.
OverlapCounts overlap(const LabelVolume& a, const LabelVolume& b, std::uint8_t label);

// 2|a n b| / (|a| + |b|) and |a n b| / |a u b|; nullopt when both are empty.
std::optional<double> dice(const OverlapCounts& counts);
std::optional<double> jaccard(const OverlapCounts& counts);

// Physical centers (mm) of label voxels with at least one 6-neighbour outside
// the label or outside the volume. Empty when the label is absent.
struct SurfaceVoxelSet {
  std::vector<Point> points;
};

SurfaceVoxelSet extract_surface(const LabelVolume& labels, std::uint8_t label);

// Exact nearest-neighbour queries over a fixed point set.
class KdTree {
 public:
  explicit KdTree(std::vector<Point> points);

  // Squared Euclidean distance to the nearest point. Requires a nonempty set.
  double nearest_squared(const Point& query) const;
  std::size_t size() const { return points_.size(); }

 private:
  struct Node {
    std::size_t point = 0;
    int axis = 0;
    std::int32_t left = -1;
    std::int32_t right = -1;
  };

  std::int32_t build(std::vector<std::size_t>& order, std::size_t begin, std::size_t end, int depth);
  void search(std::int32_t node, const Point& query, double& best) const;

  std::vector<Point> points_;
  std::vector<Node> nodes_;
  std::int32_t root_ = -1;
};

// Nearest distance (mm) from each point of `from` to the set `to`.
std::vector<double> directed_distances(const SurfaceVoxelSet& from, const SurfaceVoxelSet& to);

// Both return nullopt when either set is empty.
std::optional<double> hausdorff(const SurfaceVoxelSet& a, const SurfaceVoxelSet& b);
std::optional<double> assd(const SurfaceVoxelSet& a, const SurfaceVoxelSet& b);

}  // namespace lumbarseg::metrics
