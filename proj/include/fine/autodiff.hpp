#pragma once

#include <cstddef>
#include <functional>
#include <span>
#include <vector>

#include "fine/tensor.hpp"

// Tensor-level reverse-mode differentiation.
//
// A Tape records every differentiable op applied during a forward pass, in
// creation order. Nodes either own their value or borrow it (constants and
// parameters that outlive the tape). `backward` walks the tape in reverse and
// returns one gradient per requested trainable leaf.
namespace fine {

template <typename T>
class Tape;

template <typename T>
class Var {
 public:
  Var() = default;

  bool valid() const { return tape_ != nullptr; }
  Tape<T>& tape() const { return *tape_; }
  std::size_t id() const { return id_; }
  const Tensor<T>& value() const { return tape_->value(id_); }
  const Shape& shape() const { return value().shape(); }

 private:
  friend class Tape<T>;
  Var(Tape<T>* tape, std::size_t id) : tape_(tape), id_(id) {}

  Tape<T>* tape_ = nullptr;
  std::size_t id_ = 0;
};

template <typename T>
class Tape {
 public:
  using BackwardFn = std::function<void(Tape&, std::size_t)>;

  Tape() = default;
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  // Trainable leaves. `parameter` borrows; the tensor must outlive the tape.
  Var<T> leaf(Tensor<T> value);
  Var<T> parameter(const Tensor<T>& value);

  Var<T> constant(Tensor<T> value);
  Var<T> constant_ref(const Tensor<T>& value);

  // Appends an op result. `fn` runs during backward only if some parent needs a gradient.
  Var<T> record(Tensor<T> value, std::initializer_list<Var<T>> parents, BackwardFn fn);

  const Tensor<T>& value(std::size_t id) const;
  bool requires_grad(std::size_t id) const { return nodes_[id].requires_grad; }
  bool is_trainable(std::size_t id) const { return nodes_[id].trainable; }
  bool owns(const Var<T>& v) const { return v.valid() && &v.tape() == this && v.id() < nodes_.size(); }

  // Gradient buffer of a node, zero-filled on first use within a backward pass.
  Tensor<T>& grad(std::size_t id);

  // Gradients of scalar `loss` with respect to each leaf in `leaves`.
  // Throws UsageError if a leaf is foreign to this tape or not trainable.
  std::vector<Tensor<T>> backward(const Var<T>& loss, std::span<const Var<T>> leaves);

  std::size_t size() const { return nodes_.size(); }

 private:
  struct Node {
    Tensor<T> owned;
    const Tensor<T>* borrowed = nullptr;
    Tensor<T> grad;
    bool has_grad = false;
    bool requires_grad = false;
    bool trainable = false;
    BackwardFn backward;
  };

  Var<T> push(Node node);

  std::vector<Node> nodes_;
};

// Contiguous run of packed rows that form one causal sequence.
struct Segment {
  std::size_t start = 0;
  std::size_t length = 0;
};

template <typename T> Var<T> add(const Var<T>& a, const Var<T>& b);
template <typename T> Var<T> sub(const Var<T>& a, const Var<T>& b);
template <typename T> Var<T> mul(const Var<T>& a, const Var<T>& b);
template <typename T> Var<T> scale(const Var<T>& a, T factor);
template <typename T> Var<T> exp(const Var<T>& a);
template <typename T> Var<T> log(const Var<T>& a);
template <typename T> Var<T> gelu(const Var<T>& a);
// log(1 - e^a), elementwise; defined for a < 0.
template <typename T> Var<T> log1m_exp(const Var<T>& a);

template <typename T> Var<T> matmul(const Var<T>& a, const Var<T>& b);
template <typename T> Var<T> matmul_nt(const Var<T>& a, const Var<T>& b);

template <typename T> Var<T> log_softmax(const Var<T>& a);
template <typename T> Var<T> layer_norm(const Var<T>& x, const Var<T>& gain, const Var<T>& bias, T eps);

template <typename T> Var<T> sum(const Var<T>& a);
template <typename T> Var<T> mean(const Var<T>& a);

template <typename T> Var<T> select_rows(const Var<T>& a, std::vector<std::size_t> rows);
template <typename T> Var<T> gather_cols(const Var<T>& a, std::vector<std::size_t> cols);
// out[i] = a(rows[i], cols[i])
template <typename T>
Var<T> pick(const Var<T>& a, std::vector<std::size_t> rows, std::vector<std::size_t> cols);
template <typename T> Var<T> embedding(const Var<T>& table, std::vector<std::size_t> ids);

// Multi-head causal attention over packed sequences; q, k, v are (rows × d).
template <typename T>
Var<T> causal_attention(const Var<T>& q, const Var<T>& k, const Var<T>& v, std::size_t heads,
                        std::vector<Segment> segments);

}  // namespace fine
