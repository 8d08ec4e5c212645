#include "lumbarseg/segnet/network.hpp"

#include <string>
#include <vector>

namespace lumbarseg::seg {

void check_patch_extents(const Shape& spatial, int depth) {
  const Index unit = Index{1} << depth;
  for (Index e : spatial) {
    if (e < unit || e % unit != 0) {
      throw ShapeError("patch extents " + ad::to_string(spatial) + " must be multiples of " +
                       std::to_string(unit) + " for depth " + std::to_string(depth));
    }
  }
}

template <typename Scalar>
SegmentationNet<Scalar>::SegmentationNet(const SegNetArchitecture& arch, std::uint64_t seed)
    : arch_(arch) {
  if (arch.depth < 1) throw ShapeError("SegmentationNet depth must be >= 1");
  if (arch.class_count < 2) throw ShapeError("SegmentationNet needs at least 2 classes");
  std::mt19937_64 rng(seed);
  Index c_in = 1;
  for (int level = 0; level < arch.depth; ++level) {
    const Index width = arch.base_width << level;
    const std::string prefix = "enc" + std::to_string(level);
    ad::add_conv_bn_relu(params_, prefix + ".a", c_in, width, rng);
    ad::add_conv_bn_relu(params_, prefix + ".b", width, width, rng);
    c_in = width;
  }
  const Index bottom = arch.base_width << arch.depth;
  ad::add_conv_bn_relu(params_, "bottom.a", c_in, bottom, rng);
  ad::add_conv_bn_relu(params_, "bottom.b", bottom, bottom, rng);
  c_in = bottom;
  for (int level = arch.depth - 1; level >= 0; --level) {
    const Index width = arch.base_width << level;
    const std::string prefix = "dec" + std::to_string(level);
    ad::add_transposed_conv(params_, prefix + ".up", c_in, width, rng);
    ad::add_conv_bn_relu(params_, prefix + ".a", 2 * width, width, rng);
    ad::add_conv_bn_relu(params_, prefix + ".b", width, width, rng);
    c_in = width;
  }
  ad::add_conv(params_, kFinalLayer, c_in, arch.class_count, 1, rng);
}

template <typename Scalar>
std::vector<std::string> SegmentationNet<Scalar>::final_layer_tensors() {
  return {std::string(kFinalLayer) + ".weight", std::string(kFinalLayer) + ".bias"};
}

template <typename Scalar>
Tensor<Scalar> SegmentationNet<Scalar>::forward(const Tensor<Scalar>& patch, Mode mode,
                                                const SegForwardOptions& options) const {
  if (patch.rank() != 4 || patch.dim(0) != 1) {
    throw ShapeError("SegmentationNet expects a (1, D, H, W) patch, got " +
                     ad::to_string(patch.shape()));
  }
  check_patch_extents({patch.dim(1), patch.dim(2), patch.dim(3)}, arch_.depth);

  std::vector<Tensor<Scalar>> skips;
  Tensor<Scalar> x = patch;
  for (int level = 0; level < arch_.depth; ++level) {
    const std::string prefix = "enc" + std::to_string(level);
    x = ad::conv_bn_relu(params_, prefix + ".a", x, mode);
    x = ad::conv_bn_relu(params_, prefix + ".b", x, mode);
    skips.push_back(x);
    x = ad::maxpool3d(x);
  }
  x = ad::conv_bn_relu(params_, "bottom.a", x, mode);
  x = ad::conv_bn_relu(params_, "bottom.b", x, mode);
  for (int level = arch_.depth - 1; level >= 0; --level) {
    const std::string prefix = "dec" + std::to_string(level);
    x = ad::transposed_conv3d(x, params_.at(prefix + ".up.weight"), params_.at(prefix + ".up.bias"));
    Tensor<Scalar> skip = skips[static_cast<std::size_t>(level)];
    if (options.ablate_skip && *options.ablate_skip == level) {
      skip = Tensor<Scalar>::zeros(skip.shape());
    }
    x = ad::concat_channels(x, skip);
    x = ad::conv_bn_relu(params_, prefix + ".a", x, mode);
    x = ad::conv_bn_relu(params_, prefix + ".b", x, mode);
  }
  return ad::apply_conv(params_, kFinalLayer, x);
}

template class SegmentationNet<float>;
template class SegmentationNet<double>;

}  // namespace lumbarseg::seg
