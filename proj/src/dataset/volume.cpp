#include "lumbarseg/dataset/volume.hpp"

#include <algorithm>
#include <cmath>

namespace lumbarseg::data {

std::string to_string(const Extents& e) {
  return std::to_string(e[0]) + "x" + std::to_string(e[1]) + "x" + std::to_string(e[2]);
}

double intersection_volume(const BoundingBox3D& a, const BoundingBox3D& b) {
  const Vec3 lo = a.low.cwiseMax(b.low);
  const Vec3 hi = a.high.cwiseMin(b.high);
  const Vec3 side = (hi - lo).cwiseMax(0.0);
  return side.prod();
}

double box_iou(const BoundingBox3D& a, const BoundingBox3D& b) {
  const double inter = intersection_volume(a, b);
  const double uni = a.volume() + b.volume() - inter;
  return uni > 0.0 ? inter / uni : 0.0;
}

BoundingBox3D tight_box(const LabelVolume& labels) {
  Extents lo{labels.extents[0], labels.extents[1], labels.extents[2]};
  Extents hi{-1, -1, -1};
  for (Index z = 0; z < labels.extents[0]; ++z) {
    for (Index y = 0; y < labels.extents[1]; ++y) {
      for (Index x = 0; x < labels.extents[2]; ++x) {
        if (labels(z, y, x) == 0) continue;
        const Extents p{z, y, x};
        for (int a = 0; a < 3; ++a) {
          lo[a] = std::min(lo[a], p[a]);
          hi[a] = std::max(hi[a], p[a]);
        }
      }
    }
  }
  if (hi[0] < 0) throw DataError("tight_box: label volume has no foreground voxels");
  BoundingBox3D box;
  for (int a = 0; a < 3; ++a) {
    box.low[a] = static_cast<double>(lo[a]) - 0.5;
    box.high[a] = static_cast<double>(hi[a]) + 0.5;
  }
  return box;
}

CropRegion crop_region(const Extents& extents, const BoundingBox3D& box, Index margin) {
  CropRegion r;
  for (int a = 0; a < 3; ++a) {
    // Centers inside [low, high]: ceil(low) .. floor(high).
    const double first = std::ceil(box.low[a]) - static_cast<double>(margin);
    const double last = std::floor(box.high[a]) + static_cast<double>(margin);
    const double n = static_cast<double>(extents[a]);
    const double b = std::clamp(first, 0.0, n);
    const double e = std::clamp(last + 1.0, 0.0, n);
    if (!(e > b)) {
      throw GeometryError("crop: box does not intersect the " + to_string(extents) + " grid");
    }
    r.begin[a] = static_cast<Index>(b);
    r.end[a] = static_cast<Index>(e);
  }
  return r;
}

LabelVolume binarize(const LabelVolume& labels) {
  LabelVolume out = labels;
  for (auto& v : out.values) v = v != 0 ? 1 : 0;
  return out;
}

Volume block_mean(const Volume& volume, const Extents& factor) {
  Extents e;
  Vec3 f;
  for (int a = 0; a < 3; ++a) {
    if (factor[a] < 1) throw GeometryError("block_mean: factors must be >= 1");
    e[a] = (volume.extents[a] + factor[a] - 1) / factor[a];
    f[a] = static_cast<double>(factor[a]);
  }
  Volume out(e, 0.0f, volume.spacing.cwiseProduct(f), volume.physical((f.array() - 1.0).matrix() / 2.0));
  std::vector<double> sum(out.values.size(), 0.0);
  std::vector<int> count(out.values.size(), 0);
  for (Index z = 0; z < volume.extents[0]; ++z) {
    for (Index y = 0; y < volume.extents[1]; ++y) {
      for (Index x = 0; x < volume.extents[2]; ++x) {
        const auto i = static_cast<std::size_t>(out.index(z / factor[0], y / factor[1], x / factor[2]));
        sum[i] += volume(z, y, x);
        ++count[i];
      }
    }
  }
  for (std::size_t i = 0; i < sum.size(); ++i) out.values[i] = static_cast<float>(sum[i] / count[i]);
  return out;
}

Vec3 to_coarse(const Vec3& fine, const Extents& factor) {
  Vec3 out;
  for (int a = 0; a < 3; ++a) {
    const double f = static_cast<double>(factor[a]);
    out[a] = (fine[a] - (f - 1.0) / 2.0) / f;
  }
  return out;
}

Vec3 to_fine(const Vec3& coarse, const Extents& factor) {
  Vec3 out;
  for (int a = 0; a < 3; ++a) {
    const double f = static_cast<double>(factor[a]);
    out[a] = coarse[a] * f + (f - 1.0) / 2.0;
  }
  return out;
}

}  // namespace lumbarseg::data
