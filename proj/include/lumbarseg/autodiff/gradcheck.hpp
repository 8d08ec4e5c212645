#pragma once

#include <cstddef>
#include <functional>
#include <string>
#include <vector>

#include "lumbarseg/autodiff/tensor.hpp"

namespace lumbarseg::ad {

struct GradcheckOptions {
  double step = 1e-3;
  double tolerance = 1e-4;
};

struct GradcheckReport {
  // max |analytic - numeric| / max(max |analytic|, max |numeric|) over the
  // compared coordinates of all inputs.
  double max_relative_error = 0.0;
  bool passed = false;
  // The unperturbed forward pass sat exactly on a kink (ReLU at 0, tied pooling
  // maxima); the fragment is not differentiable there and nothing was compared.
  bool excluded = false;
  std::size_t compared = 0;
  // Coordinates whose +/- step crossed a kink and were left out.
  std::size_t skipped_at_kinks = 0;
  std::string detail;
};

using Fragment = std::function<Tensor<double>(const std::vector<Tensor<double>>&)>;

// Compares reverse-mode gradients of a scalar-valued fragment with central
// differences for every element of every input that requires gradients.
GradcheckReport finite_difference_check(const Fragment& fragment,
                                        const std::vector<Tensor<double>>& inputs,
                                        const GradcheckOptions& options = {});

}  // namespace lumbarseg::ad
