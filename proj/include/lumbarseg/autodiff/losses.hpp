#pragma once

#include <Eigen/Core>

#include <cstdint>
#include <span>

#include "lumbarseg/autodiff/tensor.hpp"

namespace lumbarseg::ad {

// Mean of squared elementwise differences. Either side may require gradients.
template <typename Scalar>
Tensor<Scalar> mse_loss(const Tensor<Scalar>& predicted, const Tensor<Scalar>& target);

template <typename Scalar>
struct IouLoss {
  Tensor<Scalar> loss;
  Scalar iou = 0;
  // The boxes do not overlap: loss is -ln(eps) and carries no gradient.
  bool disjoint = false;
};

// Boxes are rebuilt as reference + displacement for both corners. The predicted
// corners are sorted per axis, so any 6-vector yields a valid box. Loss is
// -ln(IoU + eps). `predicted` holds (d_low, d_high), 6 values in any shape;
// `target` likewise (no gradient).
template <typename Scalar>
IouLoss<Scalar> iou_loss_3d(const Tensor<Scalar>& predicted,
                            const Eigen::Matrix<Scalar, 6, 1>& target,
                            const Eigen::Matrix<Scalar, 3, 1>& reference, Scalar eps = Scalar(1e-7));

// Mean over voxels of weight[label] * -log softmax(logits)[label].
// logits: (C, D, H, W); labels: one entry per voxel in 0..C-1.
template <typename Scalar>
Tensor<Scalar> weighted_cross_entropy(const Tensor<Scalar>& logits,
                                      std::span<const std::uint8_t> labels,
                                      std::span<const double> weights);

}  // namespace lumbarseg::ad
