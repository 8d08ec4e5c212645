#include "lumbarseg/autodiff/adam.hpp"

#include <cmath>
#include <string>

namespace lumbarseg::ad {

template <typename Scalar>
void adam_step(std::span<Tensor<Scalar>> params, AdamState<Scalar>& state) {
  if (state.first_moment.empty()) {
    for (const auto& p : params) {
      state.first_moment.push_back(Array<Scalar>::Zero(p.size()));
      state.second_moment.push_back(Array<Scalar>::Zero(p.size()));
    }
  }
  if (state.first_moment.size() != params.size()) {
    throw ShapeError("adam_step: optimizer holds " + std::to_string(state.first_moment.size()) +
                     " moments for " + std::to_string(params.size()) + " parameters");
  }
  for (std::size_t i = 0; i < params.size(); ++i) {
    const auto& p = params[i];
    if (state.first_moment[i].size() != p.size()) {
      throw ShapeError("adam_step: moment/parameter size mismatch at index " + std::to_string(i));
    }
    if (p.has_grad() && !p.node()->grad.allFinite()) {
      throw NumericError("adam_step: non-finite gradient in parameter " + std::to_string(i));
    }
  }

  state.step_count += 1;
  const double t = static_cast<double>(state.step_count);
  const Scalar b1 = static_cast<Scalar>(state.beta1);
  const Scalar b2 = static_cast<Scalar>(state.beta2);
  const Scalar correction1 = static_cast<Scalar>(1.0 - std::pow(state.beta1, t));
  const Scalar correction2 = static_cast<Scalar>(1.0 - std::pow(state.beta2, t));
  const Scalar lr = static_cast<Scalar>(state.learning_rate);
  const Scalar eps = static_cast<Scalar>(state.epsilon);

  for (std::size_t i = 0; i < params.size(); ++i) {
    auto& m = state.first_moment[i];
    auto& v = state.second_moment[i];
    auto p = params[i];
    if (p.has_grad()) {
      const auto& g = p.node()->grad;
      m = b1 * m + (1 - b1) * g;
      v = b2 * v + (1 - b2) * g.square();
    } else {
      m *= b1;
      v *= b2;
    }
    p.value() -= lr * (m / correction1) / ((v / correction2).sqrt() + eps);
  }
}

template void adam_step(std::span<Tensor<float>>, AdamState<float>&);
template void adam_step(std::span<Tensor<double>>, AdamState<double>&);

}  // namespace lumbarseg::ad
