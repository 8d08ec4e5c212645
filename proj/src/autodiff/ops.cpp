#include "lumbarseg/autodiff/ops.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <vector>

namespace lumbarseg::ad {

std::string to_string(const Shape& shape) {
  std::string out = "(";
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) out += ", ";
    out += std::to_string(shape[i]);
  }
  return out + ")";
}

namespace {

thread_local bool g_kink_recording = false;
double g_gradient_corruption = 0.0;

template <typename Scalar>
using RowMatrix = Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
template <typename Scalar>
using RowMap = Eigen::Map<RowMatrix<Scalar>>;
template <typename Scalar>
using ConstRowMap = Eigen::Map<const RowMatrix<Scalar>>;

struct Geometry3 {
  Index d, h, w;
  Index voxels() const { return d * h * w; }
};

void require_feature_map(const Shape& s, const char* what) {
  if (s.size() != 4) {
    throw ShapeError(std::string(what) + ": expected (C, D, H, W), got " + to_string(s));
  }
}

Geometry3 spatial(const Shape& s) { return {s[1], s[2], s[3]}; }

// Unrolls every k^3 neighbourhood of the zero-padded input into one column.
// Row r = ((c * k + kz) * k + ky) * k + kx, column = output voxel.
template <typename Scalar>
void im2col(const Scalar* input, Index channels, Geometry3 in, Index k, Index pad, Geometry3 out,
            Scalar* cols) {
  for (Index c = 0; c < channels; ++c) {
    const Scalar* src_c = input + c * in.voxels();
    for (Index kz = 0; kz < k; ++kz) {
      for (Index ky = 0; ky < k; ++ky) {
        for (Index kx = 0; kx < k; ++kx) {
          const Index row = ((c * k + kz) * k + ky) * k + kx;
          Scalar* dst = cols + row * out.voxels();
          const Index x_begin = std::max<Index>(0, pad - kx);
          const Index x_end = std::min<Index>(out.w, in.w + pad - kx);
          for (Index oz = 0; oz < out.d; ++oz) {
            const Index iz = oz + kz - pad;
            for (Index oy = 0; oy < out.h; ++oy) {
              Scalar* d = dst + (oz * out.h + oy) * out.w;
              const Index iy = oy + ky - pad;
              if (iz < 0 || iz >= in.d || iy < 0 || iy >= in.h || x_end <= x_begin) {
                std::fill(d, d + out.w, Scalar(0));
                continue;
              }
              const Scalar* s = src_c + (iz * in.h + iy) * in.w + (kx - pad);
              std::fill(d, d + x_begin, Scalar(0));
              std::memcpy(d + x_begin, s + x_begin, sizeof(Scalar) * (x_end - x_begin));
              std::fill(d + x_end, d + out.w, Scalar(0));
            }
          }
        }
      }
    }
  }
}

// Adjoint of im2col: scatters columns back onto the (unpadded) input grid.
template <typename Scalar>
void col2im(const Scalar* cols, Index channels, Geometry3 in, Index k, Index pad,
            Geometry3 out, Scalar* input_grad) {
  for (Index c = 0; c < channels; ++c) {
    Scalar* dst_c = input_grad + c * in.voxels();
    for (Index kz = 0; kz < k; ++kz) {
      for (Index ky = 0; ky < k; ++ky) {
        for (Index kx = 0; kx < k; ++kx) {
          const Index row = ((c * k + kz) * k + ky) * k + kx;
          const Scalar* src = cols + row * out.voxels();
          const Index x_begin = std::max<Index>(0, pad - kx);
          const Index x_end = std::min<Index>(out.w, in.w + pad - kx);
          if (x_end <= x_begin) continue;
          for (Index oz = 0; oz < out.d; ++oz) {
            const Index iz = oz + kz - pad;
            if (iz < 0 || iz >= in.d) continue;
            for (Index oy = 0; oy < out.h; ++oy) {
              const Index iy = oy + ky - pad;
              if (iy < 0 || iy >= in.h) continue;
              const Scalar* s = src + (oz * out.h + oy) * out.w;
              Scalar* d = dst_c + (iz * in.h + iy) * in.w + (kx - pad);
              for (Index x = x_begin; x < x_end; ++x) d[x] += s[x];
            }
          }
        }
      }
    }
  }
}

// Per-thread scratch for unrolled columns. Reused across calls so the large
// buffer is not returned to the OS and refaulted on every convolution.
template <typename Scalar>
Scalar* column_workspace(Index size) {
  thread_local std::vector<Scalar> buffer;
  if (static_cast<Index>(buffer.size()) < size) {
    buffer.clear();
    buffer.shrink_to_fit();
    buffer.resize(static_cast<std::size_t>(size));
  }
  return buffer.data();
}

template <typename Scalar>
void require_finite(const Tensor<Scalar>& t, const char* what) {
  if (!t.value().allFinite()) throw NumericError(std::string(what) + ": non-finite input");
}

}  // namespace

void set_kink_recording(bool enabled) { g_kink_recording = enabled; }
bool kink_recording() { return g_kink_recording; }

namespace testing {
void set_gradient_corruption(double factor) { g_gradient_corruption = factor; }
double gradient_corruption() { return g_gradient_corruption; }
}  // namespace testing

template <typename Scalar>
Tensor<Scalar> conv3d(const Tensor<Scalar>& input, const Tensor<Scalar>& kernel,
                      const Tensor<Scalar>& bias, Padding padding) {
  require_feature_map(input.shape(), "conv3d input");
  const Shape& ks = kernel.shape();
  if (ks.size() != 5 || ks[2] != ks[3] || ks[3] != ks[4]) {
    throw ShapeError("conv3d: kernel must be (C_out, C_in, k, k, k), got " + to_string(ks));
  }
  const Index c_in = input.dim(0);
  const Index c_out = ks[0];
  const Index k = ks[2];
  if (ks[1] != c_in) {
    throw ShapeError("conv3d: input has " + std::to_string(c_in) + " channels, kernel expects " +
                     std::to_string(ks[1]));
  }
  if (bias.defined() && bias.size() != c_out) {
    throw ShapeError("conv3d: bias size " + std::to_string(bias.size()) + " != " +
                     std::to_string(c_out));
  }
  if (padding == Padding::same && k % 2 == 0) {
    throw ShapeError("conv3d: same padding needs an odd kernel, got k=" + std::to_string(k));
  }
  require_finite(input, "conv3d");

  const Geometry3 in = spatial(input.shape());
  const Index pad = padding == Padding::same ? (k - 1) / 2 : 0;
  const Geometry3 out{in.d + 2 * pad - k + 1, in.h + 2 * pad - k + 1, in.w + 2 * pad - k + 1};
  if (out.d < 1 || out.h < 1 || out.w < 1) {
    throw ShapeError("conv3d: kernel " + std::to_string(k) + " larger than input " +
                     to_string(input.shape()));
  }
  const bool pointwise = (k == 1);

  Array<Scalar> out_values(c_out * out.voxels());
  {
    RowMap<Scalar> y(out_values.data(), c_out, out.voxels());
    ConstRowMap<Scalar> w(kernel.value().data(), c_out, c_in * k * k * k);
    if (pointwise) {
      ConstRowMap<Scalar> x(input.value().data(), c_in, in.voxels());
      y.noalias() = w * x;
    } else {
      const Index rows = c_in * k * k * k;
      Scalar* ws = column_workspace<Scalar>(rows * out.voxels());
      im2col(input.value().data(), c_in, in, k, pad, out, ws);
      y.noalias() = w * ConstRowMap<Scalar>(ws, rows, out.voxels());
    }
    if (bias.defined()) {
      for (Index c = 0; c < c_out; ++c) y.row(c).array() += bias.value()[c];
    }
  }

  auto backward = [input, kernel, bias, c_in, c_out, k, pad, in, out,
                   pointwise](const Node<Scalar>& self) {
    ConstRowMap<Scalar> dy(self.grad.data(), c_out, out.voxels());
    ConstRowMap<Scalar> w(kernel.value().data(), c_out, c_in * k * k * k);
    if (bias.defined() && bias.requires_grad()) {
      bias.node()->accumulate(dy.rowwise().sum().array().eval());
    }
    using ColMatrix = Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic>;
    const Index rows = c_in * k * k * k;
    Scalar* ws = pointwise ? nullptr : column_workspace<Scalar>(rows * out.voxels());
    if (kernel.requires_grad()) {
      RowMatrix<Scalar> dw;
      if (pointwise) {
        ConstRowMap<Scalar> x(input.value().data(), c_in, in.voxels());
        dw.noalias() = dy * x.transpose();
      } else {
        im2col(input.value().data(), c_in, in, k, pad, out, ws);
        dw.noalias() = dy * ConstRowMap<Scalar>(ws, rows, out.voxels()).transpose();
      }
      kernel.node()->accumulate(Eigen::Map<const Array<Scalar>>(dw.data(), dw.size()));
    }
    if (input.requires_grad()) {
      Array<Scalar> dx = Array<Scalar>::Zero(c_in * in.voxels());
      if (pointwise) {
        RowMap<Scalar> dxm(dx.data(), c_in, in.voxels());
        dxm.noalias() = w.transpose() * dy;
      } else {
        // Row-major (rows x N) columns share memory with a column-major
        // (N x rows) matrix; the tall product form is faster for small C_out.
        Eigen::Map<ColMatrix> cols_t(ws, out.voxels(), rows);
        Eigen::Map<const ColMatrix> dy_t(self.grad.data(), out.voxels(), c_out);
        cols_t.noalias() = dy_t * w;
        col2im(ws, c_in, in, k, pad, out, dx.data());
      }
      const double corruption = testing::gradient_corruption();
      if (corruption != 0.0) dx *= static_cast<Scalar>(1.0 + corruption);
      input.node()->accumulate(dx);
    }
  };
  return detail::make_result<Scalar>({c_out, out.d, out.h, out.w}, std::move(out_values),
                                     {input, kernel, bias}, backward);
}

template <typename Scalar>
std::vector<Index> maxpool3d_argmax(const Tensor<Scalar>& input) {
  require_feature_map(input.shape(), "maxpool3d input");
  const Index c = input.dim(0);
  const Geometry3 in = spatial(input.shape());
  if (in.d % 2 || in.h % 2 || in.w % 2) {
    throw ShapeError("maxpool3d: spatial extents must be even, got " + to_string(input.shape()));
  }
  const Geometry3 out{in.d / 2, in.h / 2, in.w / 2};
  std::vector<Index> argmax(static_cast<std::size_t>(c * out.voxels()));
  const Scalar* x = input.value().data();
  std::size_t o = 0;
  for (Index ch = 0; ch < c; ++ch) {
    const Index base = ch * in.voxels();
    for (Index z = 0; z < out.d; ++z) {
      for (Index y = 0; y < out.h; ++y) {
        for (Index xx = 0; xx < out.w; ++xx, ++o) {
          Index best = base + ((2 * z) * in.h + 2 * y) * in.w + 2 * xx;
          for (Index dz = 0; dz < 2; ++dz) {
            for (Index dy = 0; dy < 2; ++dy) {
              for (Index dx = 0; dx < 2; ++dx) {
                const Index idx = base + ((2 * z + dz) * in.h + 2 * y + dy) * in.w + 2 * xx + dx;
                if (x[idx] > x[best]) best = idx;
              }
            }
          }
          argmax[o] = best;
        }
      }
    }
  }
  return argmax;
}

template <typename Scalar>
Tensor<Scalar> maxpool3d(const Tensor<Scalar>& input) {
  std::vector<Index> argmax = maxpool3d_argmax(input);
  const Index c = input.dim(0);
  const Geometry3 in = spatial(input.shape());
  const Geometry3 out{in.d / 2, in.h / 2, in.w / 2};
  const Scalar* x = input.value().data();
  Array<Scalar> values(static_cast<Index>(argmax.size()));
  for (std::size_t i = 0; i < argmax.size(); ++i) values[static_cast<Index>(i)] = x[argmax[i]];

  // A window is at a kink when its maximum is not unique.
  bool kink = false;
  std::uint64_t signature = 0;
  if (kink_recording()) {
    signature = detail::fnv1a(argmax.data(), argmax.size() * sizeof(Index));
    std::size_t o = 0;
    for (Index ch = 0; ch < c; ++ch) {
      const Index base = ch * in.voxels();
      for (Index z = 0; z < out.d; ++z) {
        for (Index y = 0; y < out.h; ++y) {
          for (Index xx = 0; xx < out.w; ++xx, ++o) {
            for (Index dz = 0; dz < 2; ++dz) {
              for (Index dy = 0; dy < 2; ++dy) {
                for (Index dx = 0; dx < 2; ++dx) {
                  const Index idx = base + ((2 * z + dz) * in.h + 2 * y + dy) * in.w + 2 * xx + dx;
                  if (idx != argmax[o] && x[idx] == x[argmax[o]]) kink = true;
                }
              }
            }
          }
        }
      }
    }
  }

  auto backward = [input, argmax = std::move(argmax)](const Node<Scalar>& self) {
    Array<Scalar> dx = Array<Scalar>::Zero(input.size());
    for (std::size_t i = 0; i < argmax.size(); ++i) dx[argmax[i]] += self.grad[static_cast<Index>(i)];
    input.node()->accumulate(dx);
  };
  auto result = detail::make_result<Scalar>({c, out.d, out.h, out.w}, std::move(values), {input},
                                            backward);
  result.node()->at_kink = kink;
  result.node()->kink_signature = signature;
  return result;
}

template <typename Scalar>
Tensor<Scalar> transposed_conv3d(const Tensor<Scalar>& input, const Tensor<Scalar>& kernel,
                                 const Tensor<Scalar>& bias) {
  require_feature_map(input.shape(), "transposed_conv3d input");
  const Shape& ks = kernel.shape();
  if (ks.size() != 5 || ks[2] != 2 || ks[3] != 2 || ks[4] != 2) {
    throw ShapeError("transposed_conv3d: kernel must be (C_in, C_out, 2, 2, 2), got " +
                     to_string(ks));
  }
  const Index c_in = input.dim(0);
  const Index c_out = ks[1];
  if (ks[0] != c_in) {
    throw ShapeError("transposed_conv3d: input has " + std::to_string(c_in) +
                     " channels, kernel expects " + std::to_string(ks[0]));
  }
  if (bias.defined() && bias.size() != c_out) {
    throw ShapeError("transposed_conv3d: bias size mismatch");
  }
  require_finite(input, "transposed_conv3d");
  const Geometry3 in = spatial(input.shape());
  const Geometry3 out{in.d * 2, in.h * 2, in.w * 2};

  // blocks(co * 8 + offset, voxel) = sum_ci K(ci, co, offset) x(ci, voxel)
  ConstRowMap<Scalar> kmat(kernel.value().data(), c_in, c_out * 8);
  ConstRowMap<Scalar> x(input.value().data(), c_in, in.voxels());
  RowMatrix<Scalar> blocks = kmat.transpose() * x;

  Array<Scalar> values(c_out * out.voxels());
  for (Index co = 0; co < c_out; ++co) {
    const Scalar b = bias.defined() ? bias.value()[co] : Scalar(0);
    Scalar* dst = values.data() + co * out.voxels();
    for (Index off = 0; off < 8; ++off) {
      const Index a = off >> 2, bb = (off >> 1) & 1, cc = off & 1;
      const Scalar* src = blocks.row(co * 8 + off).data();
      Index v = 0;
      for (Index z = 0; z < in.d; ++z) {
        for (Index y = 0; y < in.h; ++y) {
          Scalar* row = dst + ((2 * z + a) * out.h + 2 * y + bb) * out.w + cc;
          for (Index xx = 0; xx < in.w; ++xx, ++v) row[2 * xx] = src[v] + b;
        }
      }
    }
  }

  auto backward = [input, kernel, bias, c_in, c_out, in, out](const Node<Scalar>& self) {
    RowMatrix<Scalar> dblocks(c_out * 8, in.voxels());
    for (Index co = 0; co < c_out; ++co) {
      const Scalar* src = self.grad.data() + co * out.voxels();
      for (Index off = 0; off < 8; ++off) {
        const Index a = off >> 2, bb = (off >> 1) & 1, cc = off & 1;
        Scalar* dst = dblocks.row(co * 8 + off).data();
        Index v = 0;
        for (Index z = 0; z < in.d; ++z) {
          for (Index y = 0; y < in.h; ++y) {
            const Scalar* row = src + ((2 * z + a) * out.h + 2 * y + bb) * out.w + cc;
            for (Index xx = 0; xx < in.w; ++xx, ++v) dst[v] = row[2 * xx];
          }
        }
      }
    }
    if (bias.defined() && bias.requires_grad()) {
      ConstRowMap<Scalar> dy(self.grad.data(), c_out, out.voxels());
      bias.node()->accumulate(dy.rowwise().sum().array().eval());
    }
    ConstRowMap<Scalar> kmat(kernel.value().data(), c_in, c_out * 8);
    if (kernel.requires_grad()) {
      ConstRowMap<Scalar> x(input.value().data(), c_in, in.voxels());
      RowMatrix<Scalar> dk = x * dblocks.transpose();
      kernel.node()->accumulate(Eigen::Map<const Array<Scalar>>(dk.data(), dk.size()));
    }
    if (input.requires_grad()) {
      RowMatrix<Scalar> dx = kmat * dblocks;
      input.node()->accumulate(Eigen::Map<const Array<Scalar>>(dx.data(), dx.size()));
    }
  };
  return detail::make_result<Scalar>({c_out, out.d, out.h, out.w}, std::move(values),
                                     {input, kernel, bias}, backward);
}

template <typename Scalar>
Tensor<Scalar> batch_norm3d(const Tensor<Scalar>& input, const Tensor<Scalar>& scale,
                            const Tensor<Scalar>& shift, Tensor<Scalar>& running_mean,
                            Tensor<Scalar>& running_var, Mode mode,
                            const BatchNormOptions& options) {
  require_feature_map(input.shape(), "batch_norm3d input");
  const Index c = input.dim(0);
  const Index n = input.voxels();
  if (scale.size() != c || shift.size() != c || running_mean.size() != c ||
      running_var.size() != c) {
    throw ShapeError("batch_norm3d: per-channel parameters must have " + std::to_string(c) +
                     " entries");
  }
  if (n < 1) throw ShapeError("batch_norm3d: no voxels");
  const Scalar eps = static_cast<Scalar>(options.epsilon);
  ConstRowMap<Scalar> x(input.value().data(), c, n);

  Array<Scalar> mu(c), inv_std(c);
  if (mode == Mode::train) {
    const Scalar momentum = static_cast<Scalar>(options.momentum);
    for (Index ch = 0; ch < c; ++ch) {
      const Scalar m = x.row(ch).mean();
      const Scalar var = (x.row(ch).array() - m).square().mean();
      mu[ch] = m;
      inv_std[ch] = Scalar(1) / std::sqrt(var + eps);
      const Scalar unbiased = n > 1 ? var * Scalar(n) / Scalar(n - 1) : var;
      running_mean.value()[ch] = momentum * running_mean.value()[ch] + (1 - momentum) * m;
      running_var.value()[ch] =
          std::max(momentum * running_var.value()[ch] + (1 - momentum) * unbiased,
                   std::numeric_limits<Scalar>::min());
    }
  } else {
    mu = running_mean.value();
    inv_std = (running_var.value() + eps).rsqrt();
  }

  Array<Scalar> normalized(c * n);
  Array<Scalar> values(c * n);
  for (Index ch = 0; ch < c; ++ch) {
    auto xn = normalized.segment(ch * n, n);
    xn = (x.row(ch).array().transpose() - mu[ch]) * inv_std[ch];
    values.segment(ch * n, n) = scale.value()[ch] * xn + shift.value()[ch];
  }

  auto backward = [input, scale, shift, c, n, mode, inv_std,
                   normalized = std::move(normalized)](const Node<Scalar>& self) {
    Array<Scalar> dscale(c), dshift(c);
    Array<Scalar> dx;
    if (input.requires_grad()) dx.resize(c * n);
    for (Index ch = 0; ch < c; ++ch) {
      const auto dy = self.grad.segment(ch * n, n);
      const auto xn = normalized.segment(ch * n, n);
      dshift[ch] = dy.sum();
      dscale[ch] = (dy * xn).sum();
      if (input.requires_grad()) {
        const Scalar g = scale.value()[ch] * inv_std[ch];
        if (mode == Mode::train) {
          dx.segment(ch * n, n) =
              g * (dy - dshift[ch] / Scalar(n) - xn * (dscale[ch] / Scalar(n)));
        } else {
          dx.segment(ch * n, n) = g * dy;
        }
      }
    }
    if (scale.requires_grad()) scale.node()->accumulate(dscale);
    if (shift.requires_grad()) shift.node()->accumulate(dshift);
    if (input.requires_grad()) input.node()->accumulate(dx);
  };
  return detail::make_result<Scalar>(input.shape(), std::move(values), {input, scale, shift},
                                     backward);
}

template <typename Scalar>
Tensor<Scalar> relu(const Tensor<Scalar>& input) {
  Array<Scalar> values = input.value().max(Scalar(0));
  bool kink = false;
  std::uint64_t signature = 0;
  if (kink_recording()) {
    kink = (input.value() == Scalar(0)).any();
    const Eigen::Array<std::uint8_t, Eigen::Dynamic, 1> mask =
        (input.value() > Scalar(0)).template cast<std::uint8_t>();
    signature = detail::fnv1a(mask.data(), static_cast<std::size_t>(mask.size()));
  }
  auto backward = [input](const Node<Scalar>& self) {
    input.node()->accumulate((input.value() > Scalar(0)).select(self.grad, Scalar(0)));
  };
  auto result = detail::make_result<Scalar>(input.shape(), std::move(values), {input}, backward);
  result.node()->at_kink = kink;
  result.node()->kink_signature = signature;
  return result;
}

template <typename Scalar>
Tensor<Scalar> softmax_channels(const Tensor<Scalar>& input) {
  if (input.rank() < 1 || input.dim(0) < 1) throw ShapeError("softmax_channels: no channels");
  const Index c = input.dim(0);
  const Index n = input.size() / c;
  ConstRowMap<Scalar> x(input.value().data(), c, n);
  Array<Scalar> values(c * n);
  RowMap<Scalar> p(values.data(), c, n);
  p = x.rowwise() - x.colwise().maxCoeff();
  p = p.array().exp().matrix();
  p.array().rowwise() /= p.colwise().sum().array();

  auto backward = [input, c, n](const Node<Scalar>& self) {
    ConstRowMap<Scalar> dy(self.grad.data(), c, n);
    // probabilities are the node's own value
    ConstRowMap<Scalar> prob(self.value.data(), c, n);
    const Eigen::Matrix<Scalar, 1, Eigen::Dynamic> dot = prob.cwiseProduct(dy).colwise().sum();
    Array<Scalar> dx(c * n);
    RowMap<Scalar> dxm(dx.data(), c, n);
    dxm = prob.cwiseProduct(dy.rowwise() - dot);
    input.node()->accumulate(dx);
  };
  return detail::make_result<Scalar>(input.shape(), std::move(values), {input}, backward);
}

template <typename Scalar>
Tensor<Scalar> concat_channels(const Tensor<Scalar>& a, const Tensor<Scalar>& b) {
  require_feature_map(a.shape(), "concat_channels");
  require_feature_map(b.shape(), "concat_channels");
  if (a.dim(1) != b.dim(1) || a.dim(2) != b.dim(2) || a.dim(3) != b.dim(3)) {
    throw ShapeError("concat_channels: spatial mismatch " + to_string(a.shape()) + " vs " +
                     to_string(b.shape()));
  }
  Array<Scalar> values(a.size() + b.size());
  values << a.value(), b.value();
  auto backward = [a, b](const Node<Scalar>& self) {
    if (a.requires_grad()) a.node()->accumulate(self.grad.head(a.size()));
    if (b.requires_grad()) b.node()->accumulate(self.grad.tail(b.size()));
  };
  return detail::make_result<Scalar>({a.dim(0) + b.dim(0), a.dim(1), a.dim(2), a.dim(3)},
                                     std::move(values), {a, b}, backward);
}

template <typename Scalar>
Tensor<Scalar> add(const Tensor<Scalar>& a, const Tensor<Scalar>& b) {
  if (a.shape() != b.shape()) {
    throw ShapeError("add: " + to_string(a.shape()) + " vs " + to_string(b.shape()));
  }
  auto backward = [a, b](const Node<Scalar>& self) {
    if (a.requires_grad()) a.node()->accumulate(self.grad);
    if (b.requires_grad()) b.node()->accumulate(self.grad);
  };
  return detail::make_result<Scalar>(a.shape(), (a.value() + b.value()).eval(), {a, b}, backward);
}

template <typename Scalar>
Tensor<Scalar> scale(const Tensor<Scalar>& a, Scalar factor) {
  auto backward = [a, factor](const Node<Scalar>& self) {
    a.node()->accumulate(self.grad * factor);
  };
  return detail::make_result<Scalar>(a.shape(), (a.value() * factor).eval(), {a}, backward);
}

template <typename Scalar>
Tensor<Scalar> sum(const Tensor<Scalar>& a) {
  Array<Scalar> v(1);
  v[0] = a.value().sum();
  auto backward = [a](const Node<Scalar>& self) {
    a.node()->accumulate(Array<Scalar>::Constant(a.size(), self.grad[0]));
  };
  return detail::make_result<Scalar>({1}, std::move(v), {a}, backward);
}

template <typename Scalar>
Tensor<Scalar> mean(const Tensor<Scalar>& a) {
  return scale(sum(a), Scalar(1) / static_cast<Scalar>(a.size()));
}

#define LUMBARSEG_INSTANTIATE_OPS(S)                                                            \
  template Tensor<S> conv3d(const Tensor<S>&, const Tensor<S>&, const Tensor<S>&, Padding);     \
  template Tensor<S> maxpool3d(const Tensor<S>&);                                              \
  template std::vector<Index> maxpool3d_argmax(const Tensor<S>&);                              \
  template Tensor<S> transposed_conv3d(const Tensor<S>&, const Tensor<S>&, const Tensor<S>&);  \
  template Tensor<S> batch_norm3d(const Tensor<S>&, const Tensor<S>&, const Tensor<S>&,        \
                                  Tensor<S>&, Tensor<S>&, Mode, const BatchNormOptions&);      \
  template Tensor<S> relu(const Tensor<S>&);                                                   \
  template Tensor<S> softmax_channels(const Tensor<S>&);                                       \
  template Tensor<S> concat_channels(const Tensor<S>&, const Tensor<S>&);                      \
  template Tensor<S> add(const Tensor<S>&, const Tensor<S>&);                                  \
  template Tensor<S> scale(const Tensor<S>&, S);                                               \
  template Tensor<S> sum(const Tensor<S>&);                                                    \
  template Tensor<S> mean(const Tensor<S>&);

LUMBARSEG_INSTANTIATE_OPS(float)
LUMBARSEG_INSTANTIATE_OPS(double)

}  // namespace lumbarseg::ad
