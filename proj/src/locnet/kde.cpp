#include "lumbarseg/locnet/kde.hpp"

#include <algorithm>
#include <cmath>

namespace lumbarseg::loc {

Vec3 scott_bandwidth(const std::vector<Vec3>& votes, const KdeOptions& options) {
  if (options.fixed_bandwidth > 0.0) return Vec3::Constant(options.fixed_bandwidth);
  const double n = static_cast<double>(votes.size());
  Vec3 mean = Vec3::Zero();
  for (const auto& v : votes) mean += v;
  mean /= n;
  Vec3 var = Vec3::Zero();
  for (const auto& v : votes) var += (v - mean).cwiseAbs2();
  var /= std::max(1.0, n - 1.0);
  const Vec3 h = var.cwiseSqrt() * std::pow(n, -1.0 / 7.0);
  return h.cwiseMax(options.min_bandwidth);
}

Vec3 density_mode(std::vector<Vec3> votes, const KdeOptions& options) {
  if (votes.empty()) throw LocalizationError("kde: no votes");
  std::sort(votes.begin(), votes.end(), [](const Vec3& a, const Vec3& b) {
    return std::lexicographical_compare(a.data(), a.data() + 3, b.data(), b.data() + 3);
  });
  const Vec3 inv_h = scott_bandwidth(votes, options).cwiseInverse();
  const std::size_t n = votes.size();
  std::size_t best = 0;
  double best_density = -1.0;
  for (std::size_t j = 0; j < n; ++j) {
    double density = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
      density += std::exp(-0.5 * (votes[j] - votes[i]).cwiseProduct(inv_h).squaredNorm());
    }
    if (density > best_density) {
      best_density = density;
      best = j;
    }
  }
  if (options.mean_shift_iterations <= 0) return votes[best];
  // Gaussian mean-shift from the densest vote climbs to the continuous mode
  // of that vote's basin; each step cannot lower the density.
  Vec3 x = votes[best];
  for (int it = 0; it < options.mean_shift_iterations; ++it) {
    Vec3 weighted = Vec3::Zero();
    double total = 0.0;
    for (const auto& v : votes) {
      const double w = std::exp(-0.5 * (v - x).cwiseProduct(inv_h).squaredNorm());
      weighted += w * v;
      total += w;
    }
    const Vec3 next = weighted / total;
    const double step = (next - x).cwiseAbs().maxCoeff();
    x = next;
    if (step < 1e-9) break;
  }
  return x;
}

data::BoundingBox3D kde_aggregate(const CornerVotes& votes, const KdeOptions& options) {
  if (votes.low.empty() || votes.high.empty()) throw LocalizationError("kde: empty corner votes");
  if (votes.low.size() != votes.high.size()) {
    throw LocalizationError("kde: corner vote counts differ");
  }
  const Vec3 a = density_mode(votes.low, options);
  const Vec3 b = density_mode(votes.high, options);
  data::BoundingBox3D box{a.cwiseMin(b), a.cwiseMax(b)};
  for (int axis = 0; axis < 3; ++axis) {
    if (!(box.high[axis] > box.low[axis])) {
      box.low[axis] -= 0.5;
      box.high[axis] += 0.5;
    }
  }
  return box;
}

}  // namespace lumbarseg::loc
