#include "lumbarseg/selfcheck.hpp"

#include <algorithm>
#include <cmath>
#include <functional>
#include <limits>
#include <random>

#include "lumbarseg/autodiff/gradcheck.hpp"
#include "lumbarseg/autodiff/losses.hpp"
#include "lumbarseg/autodiff/ops.hpp"
#include "lumbarseg/locnet/kde.hpp"
#include "lumbarseg/seeding.hpp"

namespace lumbarseg::check {

namespace {

using ad::Array;
using ad::Shape;
using ad::Tensor;
using T = Tensor<double>;
using data::Index;

T random_tensor(const Shape& shape, std::mt19937_64& rng, bool grad, double lo = -1.0, double hi = 1.0) {
  std::uniform_real_distribution<double> u(lo, hi);
  Array<double> v(ad::element_count(shape));
  for (Index i = 0; i < v.size(); ++i) v[i] = u(rng);
  return T::from(shape, std::move(v), grad);
}

// One random draw: the inputs to check and the scalar fragment over them.
// An empty input list asks for a redraw (too close to a non-smooth point).
struct Draw {
  std::vector<T> inputs;
  ad::Fragment fragment;
};

using Family = std::function<Draw(std::mt19937_64&)>;

Draw conv_draw(std::mt19937_64& rng) {
  auto target = random_tensor({3, 4, 5, 3}, rng, false);
  return {{random_tensor({2, 4, 5, 3}, rng, true), random_tensor({3, 2, 3, 3, 3}, rng, true),
           random_tensor({3}, rng, true)},
          [target](const std::vector<T>& in) { return ad::mse_loss(ad::conv3d(in[0], in[1], in[2]), target); }};
}

Draw transposed_draw(std::mt19937_64& rng) {
  auto target = random_tensor({2, 4, 6, 4}, rng, false);
  return {{random_tensor({3, 2, 3, 2}, rng, true), random_tensor({3, 2, 2, 2, 2}, rng, true),
           random_tensor({2}, rng, true)},
          [target](const std::vector<T>& in) {
            return ad::mse_loss(ad::transposed_conv3d(in[0], in[1], in[2]), target);
          }};
}

Draw batch_norm_draw(std::mt19937_64& rng) {
  auto target = random_tensor({3, 3, 4, 3}, rng, false);
  return {{random_tensor({3, 3, 4, 3}, rng, true, -2.0, 2.0), random_tensor({3}, rng, true, 0.5, 1.5),
           random_tensor({3}, rng, true)},
          [target](const std::vector<T>& in) {
            auto mean = T::zeros({3});
            auto var = T::constant({3}, 1.0);
            return ad::mse_loss(ad::batch_norm3d(in[0], in[1], in[2], mean, var, ad::Mode::train), target);
          }};
}

Draw relu_draw(std::mt19937_64& rng) {
  auto target = random_tensor({2, 4, 4, 4}, rng, false);
  return {{random_tensor({2, 4, 4, 4}, rng, true), random_tensor({2, 2, 3, 3, 3}, rng, true),
           random_tensor({2}, rng, true)},
          [target](const std::vector<T>& in) {
            const T z = ad::conv3d(in[0], in[1], in[2]);
            return ad::add(ad::mse_loss(ad::relu(z), target), ad::mean(ad::relu(ad::scale(z, -1.0))));
          }};
}

Draw cross_entropy_draw(std::mt19937_64& rng) {
  std::uniform_int_distribution<int> label(0, 3);
  std::uniform_real_distribution<double> weight(0.1, 3.0);
  std::vector<std::uint8_t> labels(2 * 3 * 2);
  for (auto& l : labels) l = static_cast<std::uint8_t>(label(rng));
  std::vector<double> weights(4);
  for (auto& w : weights) w = weight(rng);
  return {{random_tensor({4, 2, 3, 2}, rng, true, -3.0, 3.0)}, [labels, weights](const std::vector<T>& in) {
            // softmax itself is covered through a second, weighted path.
            const T p = ad::softmax_channels(in[0]);
            return ad::add(ad::weighted_cross_entropy(in[0], labels, weights), ad::mean(ad::scale(p, 0.5)));
          }};
}

Draw mse_draw(std::mt19937_64& rng) {
  return {{random_tensor({2, 3, 3, 2}, rng, true), random_tensor({2, 3, 3, 2}, rng, true)},
          [](const std::vector<T>& in) { return ad::mse_loss(in[0], in[1]); }};
}

Draw iou_draw(std::mt19937_64& rng) {
  std::uniform_real_distribution<double> pos(-5.0, 5.0), size(2.0, 6.0);
  std::normal_distribution<double> noise(0.0, 0.5);
  Eigen::Matrix<double, 6, 1> target;
  Array<double> predicted(6);
  for (int a = 0; a < 3; ++a) {
    target[a] = pos(rng);
    target[a + 3] = target[a] + size(rng);
  }
  for (int i = 0; i < 6; ++i) predicted[i] = target[i] + noise(rng);
  // Intersection corners switch between boxes where the two coincide; keep
  // the finite-difference stencil clear of those switches.
  for (int i = 0; i < 6; ++i) {
    if (std::abs(predicted[i] - target[i]) < 0.01) return {};
  }
  const Eigen::Vector3d reference(pos(rng), pos(rng), pos(rng));
  return {{T::from({6}, std::move(predicted), true)}, [target, reference](const std::vector<T>& in) {
            return ad::iou_loss_3d(in[0], target, reference).loss;
          }};
}

GradientFamilyResult run_family(const std::string& name, const Family& family, int trials, std::uint64_t seed,
                                double tolerance) {
  GradientFamilyResult r{name, 0, 0, 0, 0.0};
  std::mt19937_64 rng(seed);
  const int max_draws = trials * 10;
  for (int draw = 0; draw < max_draws && r.trials < trials; ++draw) {
    Draw d = family(rng);
    if (d.inputs.empty()) {
      ++r.excluded;
      continue;
    }
    const auto report = ad::finite_difference_check(d.fragment, d.inputs, {.step = 1e-4, .tolerance = tolerance});
    if (report.excluded) {
      ++r.excluded;
      continue;
    }
    ++r.trials;
    r.passed += report.passed;
    r.max_relative_error = std::max(r.max_relative_error, report.max_relative_error);
  }
  return r;
}

data::LabelVolume random_labels(std::mt19937_64& rng, const data::Extents& e, const data::Vec3& spacing,
                                const data::Vec3& origin) {
  data::LabelVolume v(e, 0, spacing, origin);
  std::uniform_int_distribution<int> style(0, 2);
  const int s = style(rng);
  if (s == 0) {
    std::bernoulli_distribution on(0.35);
    for (auto& x : v.values) x = on(rng) ? 1 : 0;
  } else {
    // Union of random boxes with a second label mixed in.
    std::uniform_int_distribution<int> count(1, 3);
    const int n = count(rng);
    for (int k = 0; k < n; ++k) {
      data::Extents lo, hi;
      for (int a = 0; a < 3; ++a) {
        std::uniform_int_distribution<Index> c(0, e[a] - 1);
        Index p = c(rng), q = c(rng);
        lo[a] = std::min(p, q);
        hi[a] = std::max(p, q);
      }
      const std::uint8_t label = (s == 2 && k == 1) ? 2 : 1;
      for (Index z = lo[0]; z <= hi[0]; ++z)
        for (Index y = lo[1]; y <= hi[1]; ++y)
          for (Index x = lo[2]; x <= hi[2]; ++x) v(z, y, x) = label;
    }
  }
  return v;
}

}  // namespace

std::vector<GradientFamilyResult> gradient_suite(int trials_per_family, std::uint64_t seed, double tolerance) {
  const std::vector<std::pair<std::string, Family>> families{
      {"conv3d", conv_draw},
      {"transposed_conv3d", transposed_draw},
      {"batch_norm3d(train)", batch_norm_draw},
      {"relu composite", relu_draw},
      {"softmax + weighted cross-entropy", cross_entropy_draw},
      {"mse_loss", mse_draw},
      {"iou_loss_3d", iou_draw},
  };
  std::vector<GradientFamilyResult> out;
  for (std::size_t f = 0; f < families.size(); ++f) {
    out.push_back(run_family(families[f].first, families[f].second, trials_per_family, derive_seed(seed, f),
                             tolerance));
  }
  return out;
}

BruteForceMetrics brute_force_metrics(const data::LabelVolume& a, const data::LabelVolume& b,
                                      std::uint8_t label) {
  BruteForceMetrics m;
  double na = 0, nb = 0, both = 0;
  for (std::size_t i = 0; i < a.values.size(); ++i) {
    na += a.values[i] == label;
    nb += b.values[i] == label;
    both += a.values[i] == label && b.values[i] == label;
  }
  if (na + nb == 0) return m;
  m.dc = 2.0 * both / (na + nb);
  m.jc = both / (na + nb - both);

  // Surface via a zero-padded copy: a voxel is on the surface when any of its
  // six padded neighbours is not the label.
  auto surface = [label](const data::LabelVolume& v) {
    const auto& e = v.extents;
    const Index pz = e[0] + 2, py = e[1] + 2, px = e[2] + 2;
    std::vector<char> padded(static_cast<std::size_t>(pz * py * px), 0);
    auto at = [&](Index z, Index y, Index x) -> char& {
      return padded[static_cast<std::size_t>((z * py + y) * px + x)];
    };
    for (Index z = 0; z < e[0]; ++z)
      for (Index y = 0; y < e[1]; ++y)
        for (Index x = 0; x < e[2]; ++x) at(z + 1, y + 1, x + 1) = v(z, y, x) == label;
    std::vector<data::Vec3> pts;
    for (Index z = 1; z <= e[0]; ++z)
      for (Index y = 1; y <= e[1]; ++y)
        for (Index x = 1; x <= e[2]; ++x) {
          if (!at(z, y, x)) continue;
          const int inside = at(z - 1, y, x) + at(z + 1, y, x) + at(z, y - 1, x) + at(z, y + 1, x) +
                             at(z, y, x - 1) + at(z, y, x + 1);
          if (inside < 6) {
            pts.emplace_back(v.origin[0] + v.spacing[0] * static_cast<double>(z - 1),
                             v.origin[1] + v.spacing[1] * static_cast<double>(y - 1),
                             v.origin[2] + v.spacing[2] * static_cast<double>(x - 1));
          }
        }
    return pts;
  };
  const auto sa = surface(a), sb = surface(b);
  if (sa.empty() || sb.empty()) return m;
  m.defined = true;
  auto directed = [](const std::vector<data::Vec3>& from, const std::vector<data::Vec3>& to, double& max_d,
                     double& sum) {
    for (const auto& p : from) {
      double best = std::numeric_limits<double>::infinity();
      for (const auto& q : to) best = std::min(best, (p - q).squaredNorm());
      const double d = std::sqrt(best);
      max_d = std::max(max_d, d);
      sum += d;
    }
  };
  double hd = 0.0, total = 0.0;
  directed(sa, sb, hd, total);
  directed(sb, sa, hd, total);
  m.hd = hd;
  m.assd = total / static_cast<double>(sa.size() + sb.size());
  return m;
}

MetricOracleResult metric_oracle_suite(int pairs, std::uint64_t seed) {
  MetricOracleResult r;
  std::mt19937_64 rng(seed);
  std::uniform_int_distribution<Index> extent(1, 10);
  std::uniform_real_distribution<double> spacing(0.4, 3.0), origin(-20.0, 20.0);
  for (int p = 0; p < pairs; ++p) {
    const data::Extents e{extent(rng), extent(rng), extent(rng)};
    const data::Vec3 sp(spacing(rng), spacing(rng), spacing(rng));
    const data::Vec3 o(origin(rng), origin(rng), origin(rng));
    const auto a = random_labels(rng, e, sp, o);
    const auto b = random_labels(rng, e, sp, o);
    ++r.pairs;
    for (std::uint8_t label : {std::uint8_t{1}, std::uint8_t{2}}) {
      const auto oracle = brute_force_metrics(a, b, label);
      const auto counts = metrics::overlap(a, b, label);
      const auto dc = metrics::dice(counts);
      const auto jc = metrics::jaccard(counts);
      if (dc.has_value() != (counts.a + counts.b > 0)) ++r.overlap_mismatches;
      if (dc && (*dc != oracle.dc || *jc != oracle.jc)) ++r.overlap_mismatches;
      const auto sa = metrics::extract_surface(a, label);
      const auto sb = metrics::extract_surface(b, label);
      const auto hd = metrics::hausdorff(sa, sb);
      const auto assd = metrics::assd(sa, sb);
      if (hd.has_value() != oracle.defined) {
        r.max_distance_error = std::numeric_limits<double>::infinity();
        continue;
      }
      if (!hd) continue;
      ++r.distance_pairs;
      r.max_distance_error = std::max({r.max_distance_error, std::abs(*hd - oracle.hd), std::abs(*assd - oracle.assd)});
    }
  }
  return r;
}

KdeRecoveryResult kde_recovery_suite(int trials, int votes, double sigma, std::uint64_t first_seed) {
  KdeRecoveryResult r;
  for (int t = 0; t < trials; ++t) {
    std::mt19937_64 rng(first_seed + static_cast<std::uint64_t>(t));
    std::uniform_real_distribution<double> pos(10.0, 40.0), size(15.0, 40.0);
    std::normal_distribution<double> noise(0.0, sigma);
    data::Vec3 low, high;
    for (int a = 0; a < 3; ++a) {
      low[a] = pos(rng);
      high[a] = low[a] + size(rng);
    }
    loc::CornerVotes v;
    for (int k = 0; k < votes; ++k) {
      v.low.emplace_back(low[0] + noise(rng), low[1] + noise(rng), low[2] + noise(rng));
      v.high.emplace_back(high[0] + noise(rng), high[1] + noise(rng), high[2] + noise(rng));
    }
    const auto box = loc::kde_aggregate(v, {});
    const double err = std::max((box.low - low).cwiseAbs().maxCoeff(), (box.high - high).cwiseAbs().maxCoeff());
    r.worst_error = std::max(r.worst_error, err);
    ++r.trials;
    r.recovered += err <= 1.0;
  }
  return r;
}

}  // namespace lumbarseg::check
