#include "lumbarseg/metrics/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "lumbarseg/errors.hpp"

namespace lumbarseg::metrics {

OverlapCounts overlap(const LabelVolume& a, const LabelVolume& b, std::uint8_t label) {
  if (a.extents != b.extents) {
    throw EvaluationError("metrics: extents " + data::to_string(a.extents) + " and " + data::to_string(b.extents) +
                          " differ");
  }
  OverlapCounts c;
  for (std::size_t i = 0; i < a.values.size(); ++i) {
    const bool in_a = a.values[i] == label;
    const bool in_b = b.values[i] == label;
    c.a += in_a;
    c.b += in_b;
    c.intersection += in_a && in_b;
  }
  return c;
}

std::optional<double> dice(const OverlapCounts& c) {
  if (c.a + c.b == 0) return std::nullopt;
  return 2.0 * static_cast<double>(c.intersection) / static_cast<double>(c.a + c.b);
}

std::optional<double> jaccard(const OverlapCounts& c) {
  if (c.a + c.b == 0) return std::nullopt;
  return static_cast<double>(c.intersection) / static_cast<double>(c.a + c.b - c.intersection);
}

SurfaceVoxelSet extract_surface(const LabelVolume& labels, std::uint8_t label) {
  static constexpr Index kOffsets[6][3] = {{-1, 0, 0}, {1, 0, 0}, {0, -1, 0}, {0, 1, 0}, {0, 0, -1}, {0, 0, 1}};
  const auto& e = labels.extents;
  SurfaceVoxelSet out;
  for (Index z = 0; z < e[0]; ++z) {
    for (Index y = 0; y < e[1]; ++y) {
      for (Index x = 0; x < e[2]; ++x) {
        if (labels(z, y, x) != label) continue;
        bool boundary = false;
        for (const auto& o : kOffsets) {
          const Index nz = z + o[0], ny = y + o[1], nx = x + o[2];
          if (!labels.contains(nz, ny, nx) || labels(nz, ny, nx) != label) {
            boundary = true;
            break;
          }
        }
        if (boundary) {
          out.points.push_back(
              labels.physical(Point(static_cast<double>(z), static_cast<double>(y), static_cast<double>(x))));
        }
      }
    }
  }
  return out;
}

KdTree::KdTree(std::vector<Point> points) : points_(std::move(points)) {
  std::vector<std::size_t> order(points_.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  nodes_.reserve(points_.size());
  root_ = build(order, 0, order.size(), 0);
}

std::int32_t KdTree::build(std::vector<std::size_t>& order, std::size_t begin, std::size_t end, int depth) {
  if (begin >= end) return -1;
  const int axis = depth % 3;
  const std::size_t mid = begin + (end - begin) / 2;
  std::nth_element(order.begin() + static_cast<std::ptrdiff_t>(begin), order.begin() + static_cast<std::ptrdiff_t>(mid),
                   order.begin() + static_cast<std::ptrdiff_t>(end), [&](std::size_t l, std::size_t r) {
                     return points_[l][axis] < points_[r][axis];
                   });
  const auto index = static_cast<std::int32_t>(nodes_.size());
  nodes_.push_back({order[mid], axis, -1, -1});
  const std::int32_t left = build(order, begin, mid, depth + 1);
  const std::int32_t right = build(order, mid + 1, end, depth + 1);
  nodes_[static_cast<std::size_t>(index)].left = left;
  nodes_[static_cast<std::size_t>(index)].right = right;
  return index;
}

void KdTree::search(std::int32_t node, const Point& query, double& best) const {
  if (node < 0) return;
  const Node& n = nodes_[static_cast<std::size_t>(node)];
  const Point& p = points_[n.point];
  best = std::min(best, (p - query).squaredNorm());
  const double delta = query[n.axis] - p[n.axis];
  const std::int32_t near = delta < 0 ? n.left : n.right;
  const std::int32_t far = delta < 0 ? n.right : n.left;
  search(near, query, best);
  // Points on the far side are at least |delta| away along this axis.
  if (delta * delta <= best) search(far, query, best);
}

double KdTree::nearest_squared(const Point& query) const {
  if (root_ < 0) throw EvaluationError("kd-tree: nearest neighbour of an empty set");
  double best = std::numeric_limits<double>::infinity();
  search(root_, query, best);
  return best;
}

std::vector<double> directed_distances(const SurfaceVoxelSet& from, const SurfaceVoxelSet& to) {
  const KdTree tree(to.points);
  std::vector<double> out;
  out.reserve(from.points.size());
  for (const auto& p : from.points) out.push_back(std::sqrt(tree.nearest_squared(p)));
  return out;
}

std::optional<double> hausdorff(const SurfaceVoxelSet& a, const SurfaceVoxelSet& b) {
  if (a.points.empty() || b.points.empty()) return std::nullopt;
  double h = 0.0;
  for (double d : directed_distances(a, b)) h = std::max(h, d);
  for (double d : directed_distances(b, a)) h = std::max(h, d);
  return h;
}

std::optional<double> assd(const SurfaceVoxelSet& a, const SurfaceVoxelSet& b) {
  if (a.points.empty() || b.points.empty()) return std::nullopt;
  double total = 0.0;
  for (double d : directed_distances(a, b)) total += d;
  for (double d : directed_distances(b, a)) total += d;
  return total / static_cast<double>(a.points.size() + b.points.size());
}

}  // namespace lumbarseg::metrics
