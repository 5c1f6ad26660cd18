#include "fine/adam.hpp"

#include <cmath>
#include <string>

namespace fine {

template <typename T>
AdamState<T>::AdamState(AdamOptions options, const std::vector<Shape>& shapes) : options_(options) {
  m_.reserve(shapes.size());
  v_.reserve(shapes.size());
  for (const auto& s : shapes) {
    m_.emplace_back(s);
    v_.emplace_back(s);
  }
}

template <typename T>
void adam_step(std::span<Tensor<T>* const> params, std::span<const Tensor<T>> grads, AdamState<T>& state) {
  if (params.size() != grads.size() || params.size() != state.m_.size()) {
    throw DimensionError("adam_step: " + std::to_string(params.size()) + " params, " +
                         std::to_string(grads.size()) + " grads, " + std::to_string(state.m_.size()) +
                         " moment slots");
  }
  for (std::size_t i = 0; i < params.size(); ++i) {
    if (params[i]->shape() != grads[i].shape() || params[i]->shape() != state.m_[i].shape()) {
      throw DimensionError("adam_step: parameter " + std::to_string(i) + " has shape " +
                           shape_to_string(params[i]->shape()) + " but gradient has " +
                           shape_to_string(grads[i].shape()));
    }
  }
  const auto& o = state.options_;
  state.steps_ += 1;
  const double t = static_cast<double>(state.steps_);
  const T b1 = T(o.beta1), b2 = T(o.beta2);
  const T c1 = T(1.0 - std::pow(o.beta1, t));
  const T c2 = T(1.0 - std::pow(o.beta2, t));
  const T lr = T(o.lr), eps = T(o.eps);
  for (std::size_t i = 0; i < params.size(); ++i) {
    auto& p = *params[i];
    const auto& g = grads[i];
    auto& m = state.m_[i];
    auto& v = state.v_[i];
    for (std::size_t j = 0; j < p.size(); ++j) {
      m[j] = b1 * m[j] + (T(1) - b1) * g[j];
      v[j] = b2 * v[j] + (T(1) - b2) * g[j] * g[j];
      const T mhat = m[j] / c1;
      const T vhat = v[j] / c2;
      p[j] -= lr * mhat / (std::sqrt(vhat) + eps);
    }
  }
}

template class AdamState<float>;
template class AdamState<double>;
template void adam_step(std::span<Tensor<float>* const>, std::span<const Tensor<float>>, AdamState<float>&);
template void adam_step(std::span<Tensor<double>* const>, std::span<const Tensor<double>>, AdamState<double>&);

}  // namespace fine
