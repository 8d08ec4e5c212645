#include "lumbarseg/autodiff/losses.hpp"

#include <array>
#include <cmath>

namespace lumbarseg::ad {

template <typename Scalar>
Tensor<Scalar> mse_loss(const Tensor<Scalar>& predicted, const Tensor<Scalar>& target) {
  if (predicted.size() != target.size()) {
    throw ShapeError("mse_loss: " + std::to_string(predicted.size()) + " predicted vs " +
                     std::to_string(target.size()) + " target values");
  }
  const Index n = predicted.size();
  Array<Scalar> diff = predicted.value() - target.value();
  Array<Scalar> v(1);
  v[0] = diff.square().sum() / Scalar(n);
  auto backward = [predicted, target, diff, n](const Node<Scalar>& self) {
    const Scalar g = self.grad[0] * Scalar(2) / Scalar(n);
    if (predicted.requires_grad()) predicted.node()->accumulate(diff * g);
    if (target.requires_grad()) target.node()->accumulate(diff * -g);
  };
  return detail::make_result<Scalar>({1}, std::move(v), {predicted, target}, backward);
}

template <typename Scalar>
IouLoss<Scalar> iou_loss_3d(const Tensor<Scalar>& predicted,
                            const Eigen::Matrix<Scalar, 6, 1>& target,
                            const Eigen::Matrix<Scalar, 3, 1>& reference, Scalar eps) {
  if (predicted.size() != 6) {
    throw ShapeError("iou_loss_3d: expected 6 predicted values, got " +
                     std::to_string(predicted.size()));
  }
  const auto& p = predicted.value();
  std::array<Scalar, 3> lo{}, hi{}, tlo{}, thi{}, inter{}, extent{};
  std::array<bool, 3> low_is_first{};  // predicted corner 0 gave the low side on this axis
  for (int a = 0; a < 3; ++a) {
    const Scalar c0 = reference[a] + p[a];
    const Scalar c1 = reference[a] + p[a + 3];
    low_is_first[a] = c0 <= c1;
    lo[a] = std::min(c0, c1);
    hi[a] = std::max(c0, c1);
    tlo[a] = reference[a] + target[a];
    thi[a] = reference[a] + target[a + 3];
    if (!(thi[a] > tlo[a])) throw GeometryError("iou_loss_3d: target box has no volume");
    inter[a] = std::max(Scalar(0), std::min(hi[a], thi[a]) - std::max(lo[a], tlo[a]));
    extent[a] = hi[a] - lo[a];
  }
  const Scalar inter_vol = inter[0] * inter[1] * inter[2];
  const Scalar pred_vol = extent[0] * extent[1] * extent[2];
  const Scalar target_vol = (thi[0] - tlo[0]) * (thi[1] - tlo[1]) * (thi[2] - tlo[2]);
  const Scalar union_vol = pred_vol + target_vol - inter_vol;
  const Scalar iou = inter_vol / union_vol;
  const bool disjoint = !(inter_vol > Scalar(0));

  Array<Scalar> v(1);
  v[0] = -std::log(iou + eps);

  IouLoss<Scalar> result;
  result.iou = iou;
  result.disjoint = disjoint;
  if (disjoint) {
    result.loss = detail::make_result<Scalar>({1}, std::move(v), {predicted},
                                              [](const Node<Scalar>&) {});
    return result;
  }

  auto backward = [=](const Node<Scalar>& self) {
    // L = -ln(I/U + eps), U = Vp + Vt - I
    const Scalar dl_diou = -self.grad[0] / (iou + eps);
    const Scalar diou_dinter = (union_vol + inter_vol) / (union_vol * union_vol);
    const Scalar diou_dpred = -inter_vol / (union_vol * union_vol);
    Array<Scalar> g = Array<Scalar>::Zero(6);
    for (int a = 0; a < 3; ++a) {
      const int b = (a + 1) % 3, c = (a + 2) % 3;
      const Scalar inter_rest = inter[b] * inter[c];
      const Scalar extent_rest = extent[b] * extent[c];
      // d/d lo[a] and d/d hi[a]
      Scalar d_lo = diou_dpred * -extent_rest;
      Scalar d_hi = diou_dpred * extent_rest;
      if (inter[a] > Scalar(0)) {
        if (lo[a] > tlo[a]) d_lo += diou_dinter * -inter_rest;
        if (hi[a] < thi[a]) d_hi += diou_dinter * inter_rest;
      }
      const int low_slot = low_is_first[a] ? a : a + 3;
      const int high_slot = low_is_first[a] ? a + 3 : a;
      g[low_slot] += dl_diou * d_lo;
      g[high_slot] += dl_diou * d_hi;
    }
    predicted.node()->accumulate(g);
  };
  result.loss = detail::make_result<Scalar>({1}, std::move(v), {predicted}, backward);
  return result;
}

template <typename Scalar>
Tensor<Scalar> weighted_cross_entropy(const Tensor<Scalar>& logits,
                                      std::span<const std::uint8_t> labels,
                                      std::span<const double> weights) {
  if (logits.rank() < 1) throw ShapeError("weighted_cross_entropy: scalar logits");
  const Index c = logits.dim(0);
  const Index n = logits.size() / c;
  if (static_cast<Index>(labels.size()) != n) {
    throw ShapeError("weighted_cross_entropy: " + std::to_string(labels.size()) +
                     " labels for " + std::to_string(n) + " voxels");
  }
  if (static_cast<Index>(weights.size()) != c) {
    throw ShapeError("weighted_cross_entropy: " + std::to_string(weights.size()) +
                     " weights for " + std::to_string(c) + " classes");
  }
  for (Index i = 0; i < n; ++i) {
    if (labels[static_cast<std::size_t>(i)] >= c) {
      throw DataError("weighted_cross_entropy: label " +
                      std::to_string(labels[static_cast<std::size_t>(i)]) + " at voxel " +
                      std::to_string(i) + " outside 0.." + std::to_string(c - 1));
    }
  }
  using RowMatrix = Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
  Eigen::Map<const RowMatrix> x(logits.value().data(), c, n);
  RowMatrix prob = x.rowwise() - x.colwise().maxCoeff();
  prob = prob.array().exp().matrix();
  const Eigen::Matrix<Scalar, 1, Eigen::Dynamic> denom = prob.colwise().sum();
  prob.array().rowwise() /= denom.array();

  Scalar total = 0;
  for (Index i = 0; i < n; ++i) {
    const auto y = labels[static_cast<std::size_t>(i)];
    // log p_y = (x_y - max) - log(sum exp(x - max))
    const Scalar log_p = x(y, i) - x.col(i).maxCoeff() - std::log(denom[i]);
    total += static_cast<Scalar>(weights[y]) * -log_p;
  }
  Array<Scalar> v(1);
  v[0] = total / Scalar(n);

  std::vector<std::uint8_t> label_copy(labels.begin(), labels.end());
  std::vector<double> weight_copy(weights.begin(), weights.end());
  auto backward = [logits, c, n, prob = std::move(prob), label_copy = std::move(label_copy),
                   weight_copy = std::move(weight_copy)](const Node<Scalar>& self) {
    Array<Scalar> dx(c * n);
    Eigen::Map<RowMatrix> d(dx.data(), c, n);
    d = prob;
    const Scalar g = self.grad[0] / Scalar(n);
    for (Index i = 0; i < n; ++i) {
      const auto y = label_copy[static_cast<std::size_t>(i)];
      d(y, i) -= Scalar(1);
      d.col(i) *= g * static_cast<Scalar>(weight_copy[y]);
    }
    logits.node()->accumulate(dx);
  };
  return detail::make_result<Scalar>({1}, std::move(v), {logits}, backward);
}

#define LUMBARSEG_INSTANTIATE_LOSSES(S)                                                   \
  template Tensor<S> mse_loss(const Tensor<S>&, const Tensor<S>&);                        \
  template IouLoss<S> iou_loss_3d(const Tensor<S>&, const Eigen::Matrix<S, 6, 1>&,        \
                                  const Eigen::Matrix<S, 3, 1>&, S);                      \
  template Tensor<S> weighted_cross_entropy(const Tensor<S>&, std::span<const std::uint8_t>, \
                                            std::span<const double>);

LUMBARSEG_INSTANTIATE_LOSSES(float)
LUMBARSEG_INSTANTIATE_LOSSES(double)

}  // namespace lumbarseg::ad
