#pragma once

#include <cstdint>
#include <span>
#include <vector>

#include "fine/tensor.hpp"

namespace fine {

struct AdamOptions {
  double lr = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

// Bias-corrected Adam moments for a fixed list of parameters.
template <typename T>
class AdamState {
 public:
  AdamState(AdamOptions options, const std::vector<Shape>& shapes);

  const AdamOptions& options() const { return options_; }
  // Learning-rate schedules adjust this between steps.
  void set_lr(double lr) { options_.lr = lr; }
  std::uint64_t steps() const { return steps_; }
  const std::vector<Tensor<T>>& first_moment() const { return m_; }
  const std::vector<Tensor<T>>& second_moment() const { return v_; }

 private:
  template <typename U>
  friend void adam_step(std::span<Tensor<U>* const>, std::span<const Tensor<U>>, AdamState<U>&);

  AdamOptions options_;
  std::uint64_t steps_ = 0;
  std::vector<Tensor<T>> m_;
  std::vector<Tensor<T>> v_;
};

// One in-place Adam update of `params` using `grads`. Throws DimensionError on any shape mismatch.
template <typename T>
void adam_step(std::span<Tensor<T>* const> params, std::span<const Tensor<T>> grads, AdamState<T>& state);

}  // namespace fine
