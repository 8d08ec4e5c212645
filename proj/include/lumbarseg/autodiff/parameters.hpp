#pragma once

#include <cstdint>
#include <map>
#include <random>
#include <string>
#include <unordered_map>
#include <vector>

#include "lumbarseg/autodiff/ops.hpp"

namespace lumbarseg::ad {

template <typename Scalar>
struct NamedTensor {
  std::string name;
  Tensor<Scalar> tensor;
  bool trainable = true;  // false for batch-norm running statistics
};

// Ordered collection of a network's tensors. Order is insertion order and is
// what checkpoints and optimizer moments follow.
template <typename Scalar>
class ParameterSet {
 public:
  Tensor<Scalar> add(const std::string& name, Shape shape, bool trainable) {
    if (index_.count(name) != 0) throw ShapeError("duplicate parameter '" + name + "'");
    index_[name] = entries_.size();
    entries_.push_back({name, Tensor<Scalar>::zeros(std::move(shape), trainable), trainable});
    return entries_.back().tensor;
  }

  bool contains(const std::string& name) const { return index_.count(name) != 0; }

  Tensor<Scalar> at(const std::string& name) const {
    const auto it = index_.find(name);
    if (it == index_.end()) throw ShapeError("unknown parameter '" + name + "'");
    return entries_[it->second].tensor;
  }

  const std::vector<NamedTensor<Scalar>>& entries() const { return entries_; }

  std::vector<Tensor<Scalar>> trainable() const {
    std::vector<Tensor<Scalar>> out;
    for (const auto& e : entries_) {
      if (e.trainable) out.push_back(e.tensor);
    }
    return out;
  }

  void zero_grad() {
    for (auto& e : entries_) e.tensor.zero_grad();
  }

  std::size_t parameter_count() const {
    std::size_t n = 0;
    for (const auto& e : entries_) {
      if (e.trainable) n += static_cast<std::size_t>(e.tensor.size());
    }
    return n;
  }

 private:
  std::vector<NamedTensor<Scalar>> entries_;
  std::unordered_map<std::string, std::size_t> index_;
};

// Hash of a tensor's shape and raw value bytes.
template <typename Scalar>
std::uint64_t tensor_hash(const Shape& shape, const Array<Scalar>& values) {
  std::uint64_t h = detail::fnv1a(shape.data(), shape.size() * sizeof(Index));
  return detail::fnv1a(values.data(), static_cast<std::size_t>(values.size()) * sizeof(Scalar), h);
}

// Per-tensor hashes keyed by name, for handoff checks between training stages.
template <typename Scalar>
std::map<std::string, std::uint64_t> tensor_hashes(const ParameterSet<Scalar>& params) {
  std::map<std::string, std::uint64_t> out;
  for (const auto& e : params.entries()) out[e.name] = tensor_hash(e.tensor.shape(), e.tensor.value());
  return out;
}

// Layer constructors. Kernels get He fan-in scaling, biases zeros, batch-norm
// scale/shift ones/zeros and running statistics 0/1.
template <typename Scalar>
void add_conv(ParameterSet<Scalar>& params, const std::string& name, Index c_in, Index c_out,
              Index k, std::mt19937_64& rng) {
  auto w = params.add(name + ".weight", {c_out, c_in, k, k, k}, true);
  params.add(name + ".bias", {c_out}, true);
  std::normal_distribution<double> dist(0.0, std::sqrt(2.0 / static_cast<double>(c_in * k * k * k)));
  for (Index i = 0; i < w.size(); ++i) w.value()[i] = static_cast<Scalar>(dist(rng));
}

template <typename Scalar>
void add_transposed_conv(ParameterSet<Scalar>& params, const std::string& name, Index c_in,
                         Index c_out, std::mt19937_64& rng) {
  auto w = params.add(name + ".weight", {c_in, c_out, 2, 2, 2}, true);
  params.add(name + ".bias", {c_out}, true);
  std::normal_distribution<double> dist(0.0, std::sqrt(2.0 / static_cast<double>(c_in)));
  for (Index i = 0; i < w.size(); ++i) w.value()[i] = static_cast<Scalar>(dist(rng));
}

template <typename Scalar>
void add_batch_norm(ParameterSet<Scalar>& params, const std::string& name, Index channels) {
  params.add(name + ".scale", {channels}, true).value().setOnes();
  params.add(name + ".shift", {channels}, true);
  params.add(name + ".running_mean", {channels}, false);
  params.add(name + ".running_var", {channels}, false).value().setOnes();
}

template <typename Scalar>
Tensor<Scalar> apply_conv(const ParameterSet<Scalar>& params, const std::string& name,
                          const Tensor<Scalar>& x, Padding padding = Padding::same) {
  return conv3d(x, params.at(name + ".weight"), params.at(name + ".bias"), padding);
}

template <typename Scalar>
Tensor<Scalar> apply_batch_norm(const ParameterSet<Scalar>& params, const std::string& name,
                                const Tensor<Scalar>& x, Mode mode) {
  auto running_mean = params.at(name + ".running_mean");
  auto running_var = params.at(name + ".running_var");
  return batch_norm3d(x, params.at(name + ".scale"), params.at(name + ".shift"), running_mean,
                      running_var, mode);
}

// conv3x3x3 -> batch norm -> ReLU, with parameters "<name>.conv" / "<name>.bn".
template <typename Scalar>
Tensor<Scalar> conv_bn_relu(const ParameterSet<Scalar>& params, const std::string& name,
                            const Tensor<Scalar>& x, Mode mode) {
  return relu(apply_batch_norm(params, name + ".bn", apply_conv(params, name + ".conv", x), mode));
}

template <typename Scalar>
void add_conv_bn_relu(ParameterSet<Scalar>& params, const std::string& name, Index c_in,
                      Index c_out, std::mt19937_64& rng) {
  add_conv(params, name + ".conv", c_in, c_out, 3, rng);
  add_batch_norm(params, name + ".bn", c_out);
}

}  // namespace lumbarseg::ad
