#include "lumbarseg/dataset/augment.hpp"

#include <algorithm>
#include <cmath>
#include <random>

namespace lumbarseg::data {

namespace {

double draw(std::mt19937_64& rng, double lo, double hi) {
  return lo == hi ? lo : std::uniform_real_distribution<double>(lo, hi)(rng);
}

Index clamp_index(double v, Index n) {
  return std::clamp<Index>(static_cast<Index>(v), 0, n - 1);
}

}  // namespace

Volume apply_intensity_affine(const Volume& volume, double scale, double shift) {
  Volume out = volume;
  for (auto& v : out.values) v = static_cast<float>(scale * v + shift);
  return out;
}

Volume gray_value_augment(const Volume& volume, const GrayAugmentOptions& options,
                          std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  const double scale = draw(rng, options.scale_min, options.scale_max);
  const double shift = draw(rng, options.shift_min, options.shift_max);
  return apply_intensity_affine(volume, scale, shift);
}

Vec3 ControlField::at(const Vec3& voxel) const {
  Index base[3];
  double frac[3];
  for (int a = 0; a < 3; ++a) {
    const double g = voxel[a] / static_cast<double>(grid_spacing);
    const Index i = std::clamp<Index>(static_cast<Index>(std::floor(g)), 0, nodes[a] - 2);
    base[a] = i;
    frac[a] = std::clamp(g - static_cast<double>(i), 0.0, 1.0);
  }
  Vec3 sum = Vec3::Zero();
  for (int corner = 0; corner < 8; ++corner) {
    double w = 1.0;
    Index idx[3];
    for (int a = 0; a < 3; ++a) {
      const int bit = (corner >> (2 - a)) & 1;
      idx[a] = std::min(base[a] + bit, nodes[a] - 1);
      w *= bit ? frac[a] : 1.0 - frac[a];
    }
    if (w == 0.0) continue;
    sum += w * displacement[static_cast<std::size_t>((idx[0] * nodes[1] + idx[1]) * nodes[2] + idx[2])];
  }
  return sum;
}

ControlField ControlField::constant(const Extents& volume_extents, Index grid_spacing, const Vec3& d) {
  ControlField f;
  f.volume_extents = volume_extents;
  f.grid_spacing = grid_spacing;
  for (int a = 0; a < 3; ++a) f.nodes[a] = (volume_extents[a] - 1) / grid_spacing + 2;
  f.displacement.assign(static_cast<std::size_t>(voxel_count(f.nodes)), d);
  return f;
}

ControlField random_control_field(const Extents& extents, const ElasticOptions& options,
                                  std::uint64_t seed) {
  if (options.grid_spacing < 1) throw GeometryError("elastic: grid spacing must be >= 1");
  ControlField f = ControlField::constant(extents, options.grid_spacing, Vec3::Zero());
  std::mt19937_64 rng(seed);
  for (auto& d : f.displacement) {
    for (int a = 0; a < 3; ++a) d[a] = draw(rng, -options.amplitude, options.amplitude);
  }
  return f;
}

std::pair<Volume, LabelVolume> apply_deformation(const Volume& volume, const LabelVolume& labels,
                                                 const ControlField& field) {
  if (!volume.same_geometry(labels)) throw GeometryError("elastic: image and labels differ in geometry");
  if (field.volume_extents != volume.extents) throw GeometryError("elastic: field built for other extents");
  const Extents& e = volume.extents;
  Volume out_image = volume.like<float>();
  LabelVolume out_labels = labels.like<std::uint8_t>();
  for (Index z = 0; z < e[0]; ++z) {
    for (Index y = 0; y < e[1]; ++y) {
      for (Index x = 0; x < e[2]; ++x) {
        const Vec3 p(static_cast<double>(z), static_cast<double>(y), static_cast<double>(x));
        Vec3 q = p + field.at(p);
        for (int a = 0; a < 3; ++a) q[a] = std::clamp(q[a], 0.0, static_cast<double>(e[a] - 1));

        Index i0[3], i1[3];
        double t[3];
        for (int a = 0; a < 3; ++a) {
          i0[a] = clamp_index(std::floor(q[a]), e[a]);
          i1[a] = std::min(i0[a] + 1, e[a] - 1);
          t[a] = q[a] - static_cast<double>(i0[a]);
        }
        double v = 0.0;
        for (int corner = 0; corner < 8; ++corner) {
          const int bz = corner >> 2, by = (corner >> 1) & 1, bx = corner & 1;
          const double w = (bz ? t[0] : 1 - t[0]) * (by ? t[1] : 1 - t[1]) * (bx ? t[2] : 1 - t[2]);
          if (w == 0.0) continue;
          v += w * volume(bz ? i1[0] : i0[0], by ? i1[1] : i0[1], bx ? i1[2] : i0[2]);
        }
        out_image(z, y, x) = static_cast<float>(v);
        out_labels(z, y, x) = labels(clamp_index(std::floor(q[0] + 0.5), e[0]),
                                     clamp_index(std::floor(q[1] + 0.5), e[1]),
                                     clamp_index(std::floor(q[2] + 0.5), e[2]));
      }
    }
  }
  return {std::move(out_image), std::move(out_labels)};
}

std::pair<Volume, LabelVolume> elastic_deform(const Volume& volume, const LabelVolume& labels,
                                              const ElasticOptions& options, std::uint64_t seed) {
  return apply_deformation(volume, labels, random_control_field(volume.extents, options, seed));
}

BoundingBox3D roi_augment(const BoundingBox3D& box, double fraction, std::uint64_t seed) {
  if (!box.valid()) throw GeometryError("roi_augment: invalid box");
  std::mt19937_64 rng(seed);
  const Vec3 size = box.size();
  BoundingBox3D out = box;
  for (int a = 0; a < 3; ++a) {
    const double r = fraction * size[a];
    out.low[a] += draw(rng, -r, r);
    out.high[a] += draw(rng, -r, r);
    if (out.low[a] > out.high[a]) std::swap(out.low[a], out.high[a]);
    if (!(out.low[a] < out.high[a])) {
      out.low[a] = box.low[a];
      out.high[a] = box.high[a];
    }
  }
  return out;
}

}  // namespace lumbarseg::data
