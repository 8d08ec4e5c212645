#include "lumbarseg/locnet/network.hpp"

#include <string>

namespace lumbarseg::loc {

template <typename Scalar>
LocalizationNet<Scalar>::LocalizationNet(const LocNetArchitecture& arch, std::uint64_t seed)
    : arch_(arch) {
  std::mt19937_64 rng(seed);
  Index c_in = 1;
  for (int stage = 0; stage < 3; ++stage) {
    const Index width = arch.widths[static_cast<std::size_t>(stage)];
    const std::string prefix = "stage" + std::to_string(stage);
    ad::add_conv_bn_relu(params_, prefix + ".a", c_in, width, rng);
    ad::add_conv_bn_relu(params_, prefix + ".b", width, width, rng);
    c_in = width;
  }
  ad::add_conv(params_, "reduce", c_in, arch.reduction_features, 4, rng);
  ad::add_conv(params_, "head.hidden", arch.reduction_features, arch.hidden_features, 1, rng);
  ad::add_conv(params_, kFinalLayer, arch.hidden_features, kOutputs, 1, rng);
}

template <typename Scalar>
Tensor<Scalar> LocalizationNet<Scalar>::forward(const Tensor<Scalar>& patch, Mode mode,
                                                Shape* pre_reduction) const {
  if (patch.rank() != 4 || patch.dim(0) != 1 || patch.dim(1) != kPatchExtent ||
      patch.dim(2) != kPatchExtent || patch.dim(3) != kPatchExtent) {
    throw ShapeError("LocalizationNet expects a (1, 32, 32, 32) patch, got " +
                     ad::to_string(patch.shape()));
  }
  Tensor<Scalar> x = patch;
  for (int stage = 0; stage < 3; ++stage) {
    const std::string prefix = "stage" + std::to_string(stage);
    x = ad::conv_bn_relu(params_, prefix + ".a", x, mode);
    x = ad::conv_bn_relu(params_, prefix + ".b", x, mode);
    x = ad::maxpool3d(x);
  }
  if (pre_reduction != nullptr) *pre_reduction = x.shape();
  x = ad::relu(ad::apply_conv(params_, "reduce", x, ad::Padding::valid));
  x = ad::relu(ad::apply_conv(params_, "head.hidden", x));
  return ad::apply_conv(params_, kFinalLayer, x);
}

template class LocalizationNet<float>;
template class LocalizationNet<double>;

}  // namespace lumbarseg::loc
