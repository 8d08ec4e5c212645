#pragma once

#include <cstdint>
#include <optional>

#include "lumbarseg/autodiff/parameters.hpp"

namespace lumbarseg::seg {

using ad::Index;
using ad::Mode;
using ad::Shape;
using ad::Tensor;

struct SegNetArchitecture {
  int depth = 3;          // pooling levels
  Index base_width = 16;  // channels at the first level, doubled per level
  Index class_count = 2;
};

struct SegForwardOptions {
  // Replace the shortcut of this level with zeros (connectivity tests).
  std::optional<int> ablate_skip;
};

// U-net style FCN. Encoder level i: two conv3-BN-ReLU then maxpool; bottom:
// two conv3-BN-ReLU; decoder level i: 2x2x2 transposed conv, concatenation with
// encoder level i's features, two conv3-BN-ReLU; final 1x1x1 conv to logits.
template <typename Scalar>
class SegmentationNet {
 public:
  static constexpr const char* kFinalLayer = "out";

  SegmentationNet(const SegNetArchitecture& arch, std::uint64_t seed);

  // patch: (1, D, H, W), each extent divisible by 2^depth. Returns
  // (class_count, D, H, W) logits.
  Tensor<Scalar> forward(const Tensor<Scalar>& patch, Mode mode,
                         const SegForwardOptions& options = {}) const;

  ad::ParameterSet<Scalar>& parameters() { return params_; }
  const ad::ParameterSet<Scalar>& parameters() const { return params_; }
  const SegNetArchitecture& architecture() const { return arch_; }

  // Names of the tensors belonging to the final classification layer.
  static std::vector<std::string> final_layer_tensors();

 private:
  SegNetArchitecture arch_;
  ad::ParameterSet<Scalar> params_;
};

// Throws ShapeError unless every extent is a positive multiple of 2^depth.
void check_patch_extents(const Shape& spatial, int depth);

}  // namespace lumbarseg::seg
