#pragma once

// The layer set shared by both networks. Every op takes and returns
// channels-first tensors of shape (C, D, H, W) unless stated otherwise and
// records a backward closure when any input requires gradients.

#include <cstdint>
#include <span>

#include "lumbarseg/autodiff/tensor.hpp"

namespace lumbarseg::ad {

enum class Padding { same, valid };
enum class Mode { train, eval };

// kernel: (C_out, C_in, k, k, k); bias: (C_out) or undefined. Stride 1.
// `same` needs an odd k and preserves spatial extents; `valid` shrinks each
// extent by k - 1.
template <typename Scalar>
Tensor<Scalar> conv3d(const Tensor<Scalar>& input, const Tensor<Scalar>& kernel,
                      const Tensor<Scalar>& bias, Padding padding = Padding::same);

// 2x2x2 window, stride 2. The gradient flows only to the first maximum of each
// window in scan order.
template <typename Scalar>
Tensor<Scalar> maxpool3d(const Tensor<Scalar>& input);

// Argmax (flat input index) per output element, as selected by maxpool3d.
template <typename Scalar>
std::vector<Index> maxpool3d_argmax(const Tensor<Scalar>& input);

// kernel: (C_in, C_out, 2, 2, 2); stride 2, so every extent doubles.
template <typename Scalar>
Tensor<Scalar> transposed_conv3d(const Tensor<Scalar>& input, const Tensor<Scalar>& kernel,
                                 const Tensor<Scalar>& bias);

struct BatchNormOptions {
  double epsilon = 1e-5;
  double momentum = 0.9;  // weight kept by the running statistics per update
};

// scale/shift are trainable (C); running_mean/running_var are buffers (C)
// updated in place in train mode.
template <typename Scalar>
Tensor<Scalar> batch_norm3d(const Tensor<Scalar>& input, const Tensor<Scalar>& scale,
                            const Tensor<Scalar>& shift, Tensor<Scalar>& running_mean,
                            Tensor<Scalar>& running_var, Mode mode,
                            const BatchNormOptions& options = {});

template <typename Scalar>
Tensor<Scalar> relu(const Tensor<Scalar>& input);

// Softmax across dim 0 independently at every voxel.
template <typename Scalar>
Tensor<Scalar> softmax_channels(const Tensor<Scalar>& input);

// Stacks b's channels after a's; spatial extents must agree.
template <typename Scalar>
Tensor<Scalar> concat_channels(const Tensor<Scalar>& a, const Tensor<Scalar>& b);

template <typename Scalar>
Tensor<Scalar> add(const Tensor<Scalar>& a, const Tensor<Scalar>& b);

template <typename Scalar>
Tensor<Scalar> scale(const Tensor<Scalar>& a, Scalar factor);

template <typename Scalar>
Tensor<Scalar> sum(const Tensor<Scalar>& a);

template <typename Scalar>
Tensor<Scalar> mean(const Tensor<Scalar>& a);

// While enabled (thread-local), ReLU and max pooling fill Node::at_kink and
// Node::kink_signature. Off by default; the gradient checker turns it on.
void set_kink_recording(bool enabled);
bool kink_recording();

class KinkRecordingScope {
 public:
  KinkRecordingScope() : previous_(kink_recording()) { set_kink_recording(true); }
  ~KinkRecordingScope() { set_kink_recording(previous_); }
  KinkRecordingScope(const KinkRecordingScope&) = delete;
  KinkRecordingScope& operator=(const KinkRecordingScope&) = delete;

 private:
  bool previous_;
};

namespace testing {
// Multiplies the input gradient of conv3d by (1 + factor). Zero disables.
void set_gradient_corruption(double factor);
double gradient_corruption();
}  // namespace testing

}  // namespace lumbarseg::ad
