#include <algorithm>
#include <set>
#include <vector>

#include "lumbarseg/segnet/segmenter.hpp"

namespace lumbarseg::seg {

namespace {

using data::LabelVolume;

struct Component {
  std::uint8_t label = 0;
  std::vector<Index> voxels;
  bool touches_border = false;
  std::set<std::uint8_t> neighbour_labels;  // labels adjacent to the component
};

// Connected components of voxels sharing one label value. `full` selects the
// 26-neighbourhood, otherwise the 6-neighbourhood.
std::vector<Component> components(const LabelVolume& labels, bool full, bool background) {
  const auto& e = labels.extents;
  std::vector<char> seen(labels.values.size(), 0);
  std::vector<Component> out;
  std::vector<Index> stack;
  for (Index start = 0; start < labels.size(); ++start) {
    const std::uint8_t l = labels.values[static_cast<std::size_t>(start)];
    if (seen[static_cast<std::size_t>(start)] || (l == 0) != background) continue;
    Component c;
    c.label = l;
    seen[static_cast<std::size_t>(start)] = 1;
    stack.push_back(start);
    while (!stack.empty()) {
      const Index i = stack.back();
      stack.pop_back();
      c.voxels.push_back(i);
      const Index z = i / (e[1] * e[2]);
      const Index y = (i / e[2]) % e[1];
      const Index x = i % e[2];
      if (z == 0 || y == 0 || x == 0 || z == e[0] - 1 || y == e[1] - 1 || x == e[2] - 1) c.touches_border = true;
      for (Index dz = -1; dz <= 1; ++dz) {
        for (Index dy = -1; dy <= 1; ++dy) {
          for (Index dx = -1; dx <= 1; ++dx) {
            const int manhattan = (dz != 0) + (dy != 0) + (dx != 0);
            if (manhattan == 0 || (!full && manhattan > 1)) continue;
            if (!labels.contains(z + dz, y + dy, x + dx)) continue;
            const Index j = labels.index(z + dz, y + dy, x + dx);
            const std::uint8_t m = labels.values[static_cast<std::size_t>(j)];
            if (m != l) {
              c.neighbour_labels.insert(m);
              continue;
            }
            if (!seen[static_cast<std::size_t>(j)]) {
              seen[static_cast<std::size_t>(j)] = 1;
              stack.push_back(j);
            }
          }
        }
      }
    }
    out.push_back(std::move(c));
  }
  return out;
}

bool remove_small(LabelVolume& labels, std::optional<Index> min_voxels, double fraction) {
  const auto comps = components(labels, true, false);
  if (comps.empty()) return false;
  Index threshold;
  if (min_voxels) {
    threshold = *min_voxels;
  } else {
    std::size_t largest = 0;
    for (const auto& c : comps) largest = std::max(largest, c.voxels.size());
    threshold = static_cast<Index>(fraction * static_cast<double>(largest));
  }
  bool changed = false;
  for (const auto& c : comps) {
    if (static_cast<Index>(c.voxels.size()) >= threshold) continue;
    for (Index i : c.voxels) labels.values[static_cast<std::size_t>(i)] = 0;
    changed = true;
  }
  return changed;
}

bool fill_cavities(LabelVolume& labels) {
  bool changed = false;
  for (const auto& c : components(labels, false, true)) {
    if (c.touches_border || c.neighbour_labels.size() != 1) continue;
    const std::uint8_t fill = *c.neighbour_labels.begin();
    for (Index i : c.voxels) labels.values[static_cast<std::size_t>(i)] = fill;
    changed = true;
  }
  return changed;
}

}  // namespace

LabelVolume postprocess(const LabelVolume& labels, std::optional<Index> min_component_voxels,
                        double min_component_fraction) {
  LabelVolume out = labels;
  // Each pass only removes foreground or fills background, so the loop
  // settles quickly; the cap guards against pathological alternation.
  for (int pass = 0; pass < 16; ++pass) {
    const bool removed = remove_small(out, min_component_voxels, min_component_fraction);
    const bool filled = fill_cavities(out);
    if (!removed && !filled) break;
  }
  return out;
}

}  // namespace lumbarseg::seg
