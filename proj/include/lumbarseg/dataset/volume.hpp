#pragma once

#include <Eigen/Core>
#include <array>
#include <cstdint>
#include <string>
#include <vector>

#include "lumbarseg/errors.hpp"

namespace lumbarseg::data {

using Index = Eigen::Index;
using Extents = std::array<Index, 3>;  // depth, height, width
using Vec3 = Eigen::Vector3d;           // same axis order as Extents

inline Index voxel_count(const Extents& e) { return e[0] * e[1] * e[2]; }
std::string to_string(const Extents& e);

// Dense 3D grid with physical geometry. Voxel (z, y, x) has its center at
// origin + spacing .* (z, y, x) millimetres.
template <typename T>
struct Grid {
  Extents extents{0, 0, 0};
  Vec3 spacing = Vec3::Ones();
  Vec3 origin = Vec3::Zero();
  std::vector<T> values;

  Grid() = default;
  explicit Grid(const Extents& e, T fill = T{}, const Vec3& spacing_mm = Vec3::Ones(),
                const Vec3& origin_mm = Vec3::Zero())
      : extents(e), spacing(spacing_mm), origin(origin_mm),
        values(static_cast<std::size_t>(voxel_count(e)), fill) {
    for (Index n : e) {
      if (n < 1) throw GeometryError("grid extents must be >= 1, got " + to_string(e));
    }
    if ((spacing.array() <= 0.0).any()) throw GeometryError("grid spacing must be positive");
  }

  Index size() const { return static_cast<Index>(values.size()); }
  Index index(Index z, Index y, Index x) const { return (z * extents[1] + y) * extents[2] + x; }
  T& operator()(Index z, Index y, Index x) { return values[static_cast<std::size_t>(index(z, y, x))]; }
  const T& operator()(Index z, Index y, Index x) const {
    return values[static_cast<std::size_t>(index(z, y, x))];
  }
  bool contains(Index z, Index y, Index x) const {
    return z >= 0 && y >= 0 && x >= 0 && z < extents[0] && y < extents[1] && x < extents[2];
  }

  Vec3 physical(const Vec3& voxel) const { return origin + spacing.cwiseProduct(voxel); }

  // Empty grid sharing this grid's geometry.
  template <typename U>
  Grid<U> like(U fill = U{}) const {
    return Grid<U>(extents, fill, spacing, origin);
  }

  template <typename U>
  bool same_geometry(const Grid<U>& other) const {
    return extents == other.extents && spacing == other.spacing && origin == other.origin;
  }
};

using Volume = Grid<float>;
using LabelVolume = Grid<std::uint8_t>;

inline constexpr int kMaxLabel = 5;

// Axis-aligned box in continuous voxel coordinates. Voxel i occupies
// [i - 0.5, i + 0.5] along each axis.
struct BoundingBox3D {
  Vec3 low = Vec3::Zero();
  Vec3 high = Vec3::Zero();

  bool valid() const { return (low.array() < high.array()).all() && low.allFinite() && high.allFinite(); }
  Vec3 size() const { return high - low; }
  double volume() const { return valid() ? size().prod() : 0.0; }
  bool contains_voxel(Index z, Index y, Index x) const {
    const Vec3 c(static_cast<double>(z), static_cast<double>(y), static_cast<double>(x));
    return (c.array() >= low.array()).all() && (c.array() <= high.array()).all();
  }
};

double intersection_volume(const BoundingBox3D& a, const BoundingBox3D& b);
double box_iou(const BoundingBox3D& a, const BoundingBox3D& b);

// Smallest box covering every voxel with a nonzero label. Throws DataError on
// an all-background volume.
BoundingBox3D tight_box(const LabelVolume& labels);

// Voxel index range [begin, end) per axis.
struct CropRegion {
  Extents begin{0, 0, 0};
  Extents end{0, 0, 0};
  Extents extents() const { return {end[0] - begin[0], end[1] - begin[1], end[2] - begin[2]}; }
};

// Voxels whose centers lie in the box, grown by `margin` voxels per side and
// clamped to the grid. Throws GeometryError when nothing remains.
CropRegion crop_region(const Extents& extents, const BoundingBox3D& box, Index margin);

template <typename T>
Grid<T> crop(const Grid<T>& grid, const CropRegion& region) {
  const Extents e = region.extents();
  Grid<T> out(e, T{}, grid.spacing,
              grid.physical(Vec3(static_cast<double>(region.begin[0]),
                                 static_cast<double>(region.begin[1]),
                                 static_cast<double>(region.begin[2]))));
  for (Index z = 0; z < e[0]; ++z) {
    for (Index y = 0; y < e[1]; ++y) {
      const T* src = &grid(z + region.begin[0], y + region.begin[1], region.begin[2]);
      std::copy(src, src + e[2], &out(z, y, 0));
    }
  }
  return out;
}

template <typename T>
Grid<T> crop(const Grid<T>& grid, const BoundingBox3D& box, Index margin) {
  return crop(grid, crop_region(grid.extents, box, margin));
}

// Writes `part` into `target` at the region's offset.
template <typename T>
void paste(Grid<T>& target, const Grid<T>& part, const CropRegion& region) {
  if (part.extents != region.extents()) throw GeometryError("paste: extents do not match region");
  const Extents e = region.extents();
  for (Index z = 0; z < e[0]; ++z) {
    for (Index y = 0; y < e[1]; ++y) {
      const T* src = &part(z, y, 0);
      std::copy(src, src + e[2], &target(z + region.begin[0], y + region.begin[1], region.begin[2]));
    }
  }
}

// Labels > 0 become 1.
LabelVolume binarize(const LabelVolume& labels);

// Mean over factor-sized blocks; a partial block at the far end averages the
// voxels it has. Coarse voxel j covers fine voxels [j*f, j*f + f), so its
// center sits at fine coordinate j*f + (f - 1)/2, which sets the origin.
Volume block_mean(const Volume& volume, const Extents& factor);

// Continuous voxel coordinates between a grid and its block_mean grid.
Vec3 to_coarse(const Vec3& fine, const Extents& factor);
Vec3 to_fine(const Vec3& coarse, const Extents& factor);

}  // namespace lumbarseg::data
