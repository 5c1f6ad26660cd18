#pragma once

#include <cmath>
#include <cstddef>

#include "fine/tensor.hpp"

// Plain (non-differentiable) dense kernels. Matrix arguments are rank-2.
namespace fine {

// a (m×k) · b (k×n)
template <typename T>
Tensor<T> matmul(const Tensor<T>& a, const Tensor<T>& b);

// a (m×k) · bᵀ where b is (n×k)
template <typename T>
Tensor<T> matmul_nt(const Tensor<T>& a, const Tensor<T>& b);

// aᵀ · b where a is (k×m) and b is (k×n)
template <typename T>
Tensor<T> matmul_tn(const Tensor<T>& a, const Tensor<T>& b);

// out += a · b, out += a · bᵀ, out += aᵀ · b (shapes as above)
template <typename T>
void matmul_acc(const Tensor<T>& a, const Tensor<T>& b, Tensor<T>& out);
template <typename T>
void matmul_nt_acc(const Tensor<T>& a, const Tensor<T>& b, Tensor<T>& out);
template <typename T>
void matmul_tn_acc(const Tensor<T>& a, const Tensor<T>& b, Tensor<T>& out);

// Softmax along `axis` with max subtraction.
template <typename T>
Tensor<T> softmax(const Tensor<T>& x, std::size_t axis);

// Row-wise log-softmax over the last axis.
template <typename T>
Tensor<T> log_softmax(const Tensor<T>& x);

// Normalizes each last-axis vector to zero mean and unit variance, then applies gain/bias.
template <typename T>
Tensor<T> layernorm(const Tensor<T>& x, const Tensor<T>& gain, const Tensor<T>& bias, T eps);

template <typename T>
inline T gelu(T x) {
  return T(0.5) * x * (T(1) + std::erf(x * T(0.70710678118654752440)));
}

template <typename T>
inline T gelu_derivative(T x) {
  const T cdf = T(0.5) * (T(1) + std::erf(x * T(0.70710678118654752440)));
  const T pdf = T(0.39894228040143267794) * std::exp(T(-0.5) * x * x);
  return cdf + x * pdf;
}

template <typename T>
Tensor<T> gelu(const Tensor<T>& x);

template <typename T>
std::size_t argmax(std::span<const T> values);

}  // namespace fine
