#pragma once

#include <array>
#include <cstdint>

#include "lumbarseg/autodiff/parameters.hpp"

namespace lumbarseg::loc {

using ad::Index;
using ad::Mode;
using ad::Shape;
using ad::Tensor;

struct LocNetArchitecture {
  std::array<Index, 3> widths{16, 32, 64};  // feature maps per encoder stage
  Index reduction_features = 512;           // output of the 4x4x4 reduction conv
  Index hidden_features = 512;              // first 1x1x1 conv
};

// Regression FCN: three stages of [conv3-BN-ReLU, conv3-BN-ReLU, maxpool]
// take a 32^3 patch to 4^3, a 4x4x4 valid conv reduces that to 1^3, and two
// 1x1x1 convs produce the 6 displacement outputs (d_low, d_high).
template <typename Scalar>
class LocalizationNet {
 public:
  static constexpr Index kPatchExtent = 32;
  static constexpr Index kOutputs = 6;
  static constexpr const char* kFinalLayer = "head.out";

  LocalizationNet(const LocNetArchitecture& arch, std::uint64_t seed);

  // patch: (1, 32, 32, 32). Returns a (6, 1, 1, 1) tensor. When given,
  // `pre_reduction` receives the shape of the feature map entering the 4^3 conv.
  Tensor<Scalar> forward(const Tensor<Scalar>& patch, Mode mode,
                         Shape* pre_reduction = nullptr) const;

  ad::ParameterSet<Scalar>& parameters() { return params_; }
  const ad::ParameterSet<Scalar>& parameters() const { return params_; }
  const LocNetArchitecture& architecture() const { return arch_; }

 private:
  LocNetArchitecture arch_;
  ad::ParameterSet<Scalar> params_;
};

}  // namespace lumbarseg::loc
