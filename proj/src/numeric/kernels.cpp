#include "fine/kernels.hpp"

#include <Eigen/Core>
#include <algorithm>
#include <limits>

namespace fine {

namespace {

template <typename T>
using RowMatrix = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
template <typename T>
using MapC = Eigen::Map<const RowMatrix<T>>;
template <typename T>
using Map = Eigen::Map<RowMatrix<T>>;

template <typename T>
MapC<T> as_matrix(const Tensor<T>& t) {
  return MapC<T>(t.ptr(), static_cast<Eigen::Index>(t.rows()), static_cast<Eigen::Index>(t.cols()));
}

template <typename T>
Map<T> as_matrix(Tensor<T>& t) {
  return Map<T>(t.ptr(), static_cast<Eigen::Index>(t.rows()), static_cast<Eigen::Index>(t.cols()));
}

template <typename T>
void require_matrix(const Tensor<T>& t, const char* what) {
  if (t.rank() != 2) {
    throw DimensionError(std::string(what) + ": expected a matrix, got shape " +
                         shape_to_string(t.shape()));
  }
}

[[noreturn]] void mismatch(const char* op, const Shape& a, const Shape& b) {
  throw DimensionError(std::string(op) + ": incompatible shapes " + shape_to_string(a) +
                       " and " + shape_to_string(b));
}

}  // namespace

std::string shape_to_string(const Shape& shape) {
  std::string s = "[";
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) s += ", ";
    s += std::to_string(shape[i]);
  }
  return s + "]";
}

template <typename T>
bool all_finite(const Tensor<T>& t) {
  return std::all_of(t.data().begin(), t.data().end(), [](T v) { return std::isfinite(v); });
}

template <typename T>
T max_abs_diff(const Tensor<T>& a, const Tensor<T>& b) {
  if (a.shape() != b.shape()) mismatch("max_abs_diff", a.shape(), b.shape());
  T m = 0;
  for (std::size_t i = 0; i < a.size(); ++i) m = std::max(m, std::abs(a[i] - b[i]));
  return m;
}

template <typename T>
Tensor<T> matmul(const Tensor<T>& a, const Tensor<T>& b) {
  require_matrix(a, "matmul");
  require_matrix(b, "matmul");
  if (a.dim(1) != b.dim(0)) mismatch("matmul", a.shape(), b.shape());
  Tensor<T> out({a.dim(0), b.dim(1)});
  as_matrix(out).noalias() = as_matrix(a) * as_matrix(b);
  return out;
}

template <typename T>
Tensor<T> matmul_nt(const Tensor<T>& a, const Tensor<T>& b) {
  require_matrix(a, "matmul_nt");
  require_matrix(b, "matmul_nt");
  if (a.dim(1) != b.dim(1)) mismatch("matmul_nt", a.shape(), b.shape());
  Tensor<T> out({a.dim(0), b.dim(0)});
  as_matrix(out).noalias() = as_matrix(a) * as_matrix(b).transpose();
  return out;
}

template <typename T>
Tensor<T> matmul_tn(const Tensor<T>& a, const Tensor<T>& b) {
  require_matrix(a, "matmul_tn");
  require_matrix(b, "matmul_tn");
  if (a.dim(0) != b.dim(0)) mismatch("matmul_tn", a.shape(), b.shape());
  Tensor<T> out({a.dim(1), b.dim(1)});
  as_matrix(out).noalias() = as_matrix(a).transpose() * as_matrix(b);
  return out;
}

template <typename T>
void matmul_acc(const Tensor<T>& a, const Tensor<T>& b, Tensor<T>& out) {
  if (a.dim(1) != b.dim(0) || out.dim(0) != a.dim(0) || out.dim(1) != b.dim(1)) {
    mismatch("matmul_acc", a.shape(), b.shape());
  }
  as_matrix(out).noalias() += as_matrix(a) * as_matrix(b);
}

template <typename T>
void matmul_nt_acc(const Tensor<T>& a, const Tensor<T>& b, Tensor<T>& out) {
  if (a.dim(1) != b.dim(1) || out.dim(0) != a.dim(0) || out.dim(1) != b.dim(0)) {
    mismatch("matmul_nt_acc", a.shape(), b.shape());
  }
  as_matrix(out).noalias() += as_matrix(a) * as_matrix(b).transpose();
}

template <typename T>
void matmul_tn_acc(const Tensor<T>& a, const Tensor<T>& b, Tensor<T>& out) {
  if (a.dim(0) != b.dim(0) || out.dim(0) != a.dim(1) || out.dim(1) != b.dim(1)) {
    mismatch("matmul_tn_acc", a.shape(), b.shape());
  }
  as_matrix(out).noalias() += as_matrix(a).transpose() * as_matrix(b);
}

template <typename T>
Tensor<T> softmax(const Tensor<T>& x, std::size_t axis) {
  if (axis >= x.rank()) {
    throw DimensionError("softmax: axis " + std::to_string(axis) + " out of range for shape " +
                         shape_to_string(x.shape()));
  }
  const std::size_t n = x.dim(axis);
  std::size_t inner = 1;
  for (std::size_t i = axis + 1; i < x.rank(); ++i) inner *= x.dim(i);
  const std::size_t outer = x.size() / (n * inner);
  Tensor<T> out(x.shape());
  for (std::size_t o = 0; o < outer; ++o) {
    for (std::size_t in = 0; in < inner; ++in) {
      const std::size_t base = o * n * inner + in;
      T mx = -std::numeric_limits<T>::infinity();
      for (std::size_t j = 0; j < n; ++j) mx = std::max(mx, x[base + j * inner]);
      T total = 0;
      for (std::size_t j = 0; j < n; ++j) {
        const T e = std::exp(x[base + j * inner] - mx);
        out[base + j * inner] = e;
        total += e;
      }
      for (std::size_t j = 0; j < n; ++j) out[base + j * inner] /= total;
    }
  }
  return out;
}

template <typename T>
Tensor<T> log_softmax(const Tensor<T>& x) {
  Tensor<T> out(x.shape());
  const std::size_t n = x.cols();
  for (std::size_t r = 0; r < x.rows(); ++r) {
    auto in = x.row(r);
    auto o = out.row(r);
    const T mx = *std::max_element(in.begin(), in.end());
    T total = 0;
    for (std::size_t j = 0; j < n; ++j) total += std::exp(in[j] - mx);
    const T lse = mx + std::log(total);
    for (std::size_t j = 0; j < n; ++j) o[j] = in[j] - lse;
  }
  return out;
}

template <typename T>
Tensor<T> layernorm(const Tensor<T>& x, const Tensor<T>& gain, const Tensor<T>& bias, T eps) {
  const std::size_t n = x.cols();
  if (gain.size() != n || bias.size() != n) {
    mismatch("layernorm", x.shape(), gain.shape());
  }
  Tensor<T> out(x.shape());
  for (std::size_t r = 0; r < x.rows(); ++r) {
    auto in = x.row(r);
    auto o = out.row(r);
    T mean = 0;
    for (T v : in) mean += v;
    mean /= T(n);
    T var = 0;
    for (T v : in) var += (v - mean) * (v - mean);
    var /= T(n);
    const T inv = T(1) / std::sqrt(var + eps);
    for (std::size_t j = 0; j < n; ++j) o[j] = (in[j] - mean) * inv * gain[j] + bias[j];
  }
  return out;
}

template <typename T>
Tensor<T> gelu(const Tensor<T>& x) {
  Tensor<T> out(x.shape());
  for (std::size_t i = 0; i < x.size(); ++i) out[i] = gelu(x[i]);
  return out;
}

template <typename T>
std::size_t argmax(std::span<const T> values) {
  // first maximum wins
  std::size_t best = 0;
  for (std::size_t i = 1; i < values.size(); ++i) {
    if (values[i] > values[best]) best = i;
  }
  return best;
}

#define FINE_INSTANTIATE_KERNELS(T)                                                   \
  template bool all_finite(const Tensor<T>&);                                         \
  template T max_abs_diff(const Tensor<T>&, const Tensor<T>&);                        \
  template Tensor<T> matmul(const Tensor<T>&, const Tensor<T>&);                      \
  template Tensor<T> matmul_nt(const Tensor<T>&, const Tensor<T>&);                   \
  template Tensor<T> matmul_tn(const Tensor<T>&, const Tensor<T>&);                   \
  template void matmul_acc(const Tensor<T>&, const Tensor<T>&, Tensor<T>&);           \
  template void matmul_nt_acc(const Tensor<T>&, const Tensor<T>&, Tensor<T>&);        \
  template void matmul_tn_acc(const Tensor<T>&, const Tensor<T>&, Tensor<T>&);        \
  template Tensor<T> softmax(const Tensor<T>&, std::size_t);                          \
  template Tensor<T> log_softmax(const Tensor<T>&);                                   \
  template Tensor<T> layernorm(const Tensor<T>&, const Tensor<T>&, const Tensor<T>&, T); \
  template Tensor<T> gelu(const Tensor<T>&);                                          \
  template std::size_t argmax(std::span<const T>);

FINE_INSTANTIATE_KERNELS(float)
FINE_INSTANTIATE_KERNELS(double)

}  // namespace fine
