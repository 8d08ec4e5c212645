#include "lumbarseg/dataset/patches.hpp"

#include <algorithm>
#include <random>

namespace lumbarseg::data {

Extents symmetric_padding(const Extents& volume, const Extents& patch) {
  Extents pad{0, 0, 0};
  for (int a = 0; a < 3; ++a) pad[a] = std::max<Index>(0, (patch[a] - volume[a]) / 2);
  return pad;
}

std::vector<PatchPair> sample_training_patches(const Volume& volume, const LabelVolume& labels,
                                               const Extents& patch, int count, std::uint64_t seed) {
  if (!volume.same_geometry(labels)) throw GeometryError("patches: image and labels differ in geometry");
  for (Index p : patch) {
    if (p < 1) throw GeometryError("patches: patch extents must be >= 1");
  }
  const Extents pad = symmetric_padding(volume.extents, patch);
  std::mt19937_64 rng(seed);
  std::vector<Extents> starts;
  for (int i = 0; i < count; ++i) {
    Extents s;
    for (int a = 0; a < 3; ++a) {
      const Index span = std::max(volume.extents[a], patch[a]) - patch[a];
      s[a] = std::uniform_int_distribution<Index>(0, span)(rng);
    }
    starts.push_back(s);
  }
  std::shuffle(starts.begin(), starts.end(), rng);
  std::vector<PatchPair> out;
  out.reserve(starts.size());
  for (const auto& s : starts) {
    out.push_back({s, extract_patch(volume, s, patch, pad), extract_patch(labels, s, patch, pad)});
  }
  return out;
}

}  // namespace lumbarseg::data
