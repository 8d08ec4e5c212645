#include "lumbarseg/locnet/canny.hpp"

#include <algorithm>
#include <cmath>

namespace lumbarseg::loc {

namespace {

Index clamp_to(Index i, Index n) { return std::clamp<Index>(i, 0, n - 1); }

// Smooths `v` in place along `axis` with a normalized kernel.
void convolve_axis(std::vector<double>& v, const Extents& e, int axis, const std::vector<double>& kernel) {
  const Index radius = static_cast<Index>(kernel.size() / 2);
  const Index n = e[axis];
  const Index stride = axis == 0 ? e[1] * e[2] : axis == 1 ? e[2] : 1;
  const Index lines = data::voxel_count(e) / n;
  std::vector<double> line(static_cast<std::size_t>(n));
  for (Index l = 0; l < lines; ++l) {
    // Base offset of line l: decompose over the two remaining axes.
    Index base;
    if (axis == 0) {
      base = l;
    } else if (axis == 1) {
      base = (l / e[2]) * e[1] * e[2] + l % e[2];
    } else {
      base = l * e[2];
    }
    for (Index i = 0; i < n; ++i) line[i] = v[base + i * stride];
    for (Index i = 0; i < n; ++i) {
      double s = 0.0;
      for (Index k = -radius; k <= radius; ++k) s += kernel[k + radius] * line[clamp_to(i + k, n)];
      v[base + i * stride] = s;
    }
  }
}

}  // namespace

std::vector<double> gaussian_smooth(const data::Volume& volume, double sigma) {
  const float lo = *std::min_element(volume.values.begin(), volume.values.end());
  std::vector<double> v(volume.values.size());
  for (std::size_t i = 0; i < v.size(); ++i) v[i] = static_cast<double>(volume.values[i]) - lo;
  if (sigma <= 0.0) return v;
  const Index radius = std::max<Index>(1, static_cast<Index>(std::ceil(3.0 * sigma)));
  std::vector<double> kernel(static_cast<std::size_t>(2 * radius + 1));
  double total = 0.0;
  for (Index k = -radius; k <= radius; ++k) {
    kernel[k + radius] = std::exp(-0.5 * double(k * k) / (sigma * sigma));
    total += kernel[k + radius];
  }
  for (auto& w : kernel) w /= total;
  for (int axis = 0; axis < 3; ++axis) convolve_axis(v, volume.extents, axis, kernel);
  return v;
}

ReferenceVoxelSet canny3d(const data::Volume& volume, const CannyOptions& options) {
  if (!(options.low_threshold >= 0.0 && options.low_threshold < options.high_threshold)) {
    throw ConfigError("canny3d: thresholds must satisfy 0 <= low < high");
  }
  if (!(options.sigma >= 0.0)) throw ConfigError("canny3d: sigma must be >= 0");

  ReferenceVoxelSet out;
  const auto [mn, mx] = std::minmax_element(volume.values.begin(), volume.values.end());
  if (*mn == *mx) {
    out.constant_volume = true;
    return out;
  }

  const Extents& e = volume.extents;
  const std::vector<double> s = gaussian_smooth(volume, options.sigma);
  auto at = [&](Index z, Index y, Index x) {
    return s[static_cast<std::size_t>((clamp_to(z, e[0]) * e[1] + clamp_to(y, e[1])) * e[2] + clamp_to(x, e[2]))];
  };
  const std::size_t n = s.size();
  std::vector<double> magnitude(n);
  std::vector<std::array<signed char, 3>> direction(n);
  for (Index z = 0; z < e[0]; ++z) {
    for (Index y = 0; y < e[1]; ++y) {
      for (Index x = 0; x < e[2]; ++x) {
        const double g[3] = {(at(z + 1, y, x) - at(z - 1, y, x)) / 2.0,
                             (at(z, y + 1, x) - at(z, y - 1, x)) / 2.0,
                             (at(z, y, x + 1) - at(z, y, x - 1)) / 2.0};
        const std::size_t i = static_cast<std::size_t>(volume.index(z, y, x));
        magnitude[i] = std::sqrt(g[0] * g[0] + g[1] * g[1] + g[2] * g[2]);
        const double gmax = std::max({std::abs(g[0]), std::abs(g[1]), std::abs(g[2])});
        // Component kept when above tan(22.5 deg) of the dominant one.
        for (int a = 0; a < 3; ++a) {
          direction[i][a] = (gmax > 0.0 && std::abs(g[a]) > 0.41421356237309503 * gmax)
                                ? static_cast<signed char>(g[a] > 0 ? 1 : -1)
                                : 0;
        }
      }
    }
  }

  auto mag = [&](Index z, Index y, Index x) {
    return volume.contains(z, y, x) ? magnitude[static_cast<std::size_t>(volume.index(z, y, x))] : 0.0;
  };
  // 0 = suppressed, 1 = weak, 2 = strong.
  std::vector<std::uint8_t> state(n, 0);
  for (Index z = 0; z < e[0]; ++z) {
    for (Index y = 0; y < e[1]; ++y) {
      for (Index x = 0; x < e[2]; ++x) {
        const std::size_t i = static_cast<std::size_t>(volume.index(z, y, x));
        const double m = magnitude[i];
        if (m < options.low_threshold || m == 0.0) continue;
        const auto& o = direction[i];
        if (!(m >= mag(z + o[0], y + o[1], x + o[2]) && m > mag(z - o[0], y - o[1], x - o[2]))) continue;
        state[i] = m >= options.high_threshold ? 2 : 1;
      }
    }
  }

  // Hysteresis: keep weak voxels 26-connected to a strong one.
  std::vector<Index> stack;
  for (std::size_t i = 0; i < n; ++i) {
    if (state[i] == 2) stack.push_back(static_cast<Index>(i));
  }
  while (!stack.empty()) {
    const Index i = stack.back();
    stack.pop_back();
    const Index z = i / (e[1] * e[2]), y = (i / e[2]) % e[1], x = i % e[2];
    for (Index dz = -1; dz <= 1; ++dz) {
      for (Index dy = -1; dy <= 1; ++dy) {
        for (Index dx = -1; dx <= 1; ++dx) {
          if (!volume.contains(z + dz, y + dy, x + dx)) continue;
          const std::size_t j = static_cast<std::size_t>(volume.index(z + dz, y + dy, x + dx));
          if (state[j] == 1) {
            state[j] = 2;
            stack.push_back(static_cast<Index>(j));
          }
        }
      }
    }
  }
  for (Index z = 0; z < e[0]; ++z) {
    for (Index y = 0; y < e[1]; ++y) {
      for (Index x = 0; x < e[2]; ++x) {
        if (state[static_cast<std::size_t>(volume.index(z, y, x))] == 2) out.positions.push_back({z, y, x});
      }
    }
  }
  return out;
}

}  // namespace lumbarseg::loc
