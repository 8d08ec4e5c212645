#pragma once

#include <cstdint>
#include <span>
#include <vector>

#include "lumbarseg/autodiff/tensor.hpp"

namespace lumbarseg::ad {

template <typename Scalar>
struct AdamState {
  std::uint64_t step_count = 0;
  double learning_rate = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;
  // One entry per parameter, allocated on the first step.
  std::vector<Array<Scalar>> first_moment;
  std::vector<Array<Scalar>> second_moment;
};

// Bias-corrected Adam update using each parameter's accumulated gradient (a
// parameter without a gradient buffer counts as a zero gradient). Throws
// NumericError before modifying anything if a gradient is non-finite.
template <typename Scalar>
void adam_step(std::span<Tensor<Scalar>> params, AdamState<Scalar>& state);

}  // namespace lumbarseg::ad
