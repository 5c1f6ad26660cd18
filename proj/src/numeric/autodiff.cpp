#include "fine/autodiff.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <memory>
#include <string>

#include "fine/kernels.hpp"

namespace fine {

template <typename T>
Var<T> Tape<T>::push(Node node) {
  nodes_.push_back(std::move(node));
  return Var<T>(this, nodes_.size() - 1);
}

template <typename T>
Var<T> Tape<T>::leaf(Tensor<T> value) {
  Node n;
  n.owned = std::move(value);
  n.requires_grad = true;
  n.trainable = true;
  return push(std::move(n));
}

template <typename T>
Var<T> Tape<T>::parameter(const Tensor<T>& value) {
  Node n;
  n.borrowed = &value;
  n.requires_grad = true;
  n.trainable = true;
  return push(std::move(n));
}

template <typename T>
Var<T> Tape<T>::constant(Tensor<T> value) {
  Node n;
  n.owned = std::move(value);
  return push(std::move(n));
}

template <typename T>
Var<T> Tape<T>::constant_ref(const Tensor<T>& value) {
  Node n;
  n.borrowed = &value;
  return push(std::move(n));
}

template <typename T>
Var<T> Tape<T>::record(Tensor<T> value, std::initializer_list<Var<T>> parents, BackwardFn fn) {
  Node n;
  n.owned = std::move(value);
  for (const auto& p : parents) {
    if (!owns(p)) throw UsageError("op input is not on this tape");
    n.requires_grad = n.requires_grad || nodes_[p.id()].requires_grad;
  }
  if (n.requires_grad) n.backward = std::move(fn);
  return push(std::move(n));
}

template <typename T>
const Tensor<T>& Tape<T>::value(std::size_t id) const {
  const Node& n = nodes_[id];
  return n.borrowed ? *n.borrowed : n.owned;
}

template <typename T>
Tensor<T>& Tape<T>::grad(std::size_t id) {
  Node& n = nodes_[id];
  if (!n.has_grad) {
    n.grad = Tensor<T>(value(id).shape());
    n.has_grad = true;
  }
  return n.grad;
}

template <typename T>
std::vector<Tensor<T>> Tape<T>::backward(const Var<T>& loss, std::span<const Var<T>> leaves) {
  if (!owns(loss)) throw UsageError("backward: loss is not on this tape");
  if (value(loss.id()).size() != 1) {
    throw UsageError("backward: loss must be a scalar, got shape " +
                     shape_to_string(value(loss.id()).shape()));
  }
  for (const auto& l : leaves) {
    if (!owns(l)) throw UsageError("backward: leaf is not on this tape");
    if (!nodes_[l.id()].trainable) throw UsageError("backward: leaf is not trainable");
  }
  for (auto& n : nodes_) {
    n.has_grad = false;
    n.grad = Tensor<T>();
  }
  grad(loss.id())[0] = T(1);
  for (std::size_t id = loss.id() + 1; id-- > 0;) {
    Node& n = nodes_[id];
    if (n.has_grad && n.backward) n.backward(*this, id);
  }
  std::vector<Tensor<T>> out;
  out.reserve(leaves.size());
  for (const auto& l : leaves) {
    const Node& n = nodes_[l.id()];
    out.push_back(n.has_grad ? n.grad : Tensor<T>(value(l.id()).shape()));
  }
  return out;
}

namespace {

template <typename T>
void require_same_tape(const Var<T>& a, const Var<T>& b, const char* op) {
  if (&a.tape() != &b.tape()) throw UsageError(std::string(op) + ": inputs live on different tapes");
}

template <typename T>
void require_same_shape(const Var<T>& a, const Var<T>& b, const char* op) {
  require_same_tape(a, b, op);
  if (a.shape() != b.shape()) {
    throw DimensionError(std::string(op) + ": shape mismatch " + shape_to_string(a.shape()) +
                         " vs " + shape_to_string(b.shape()));
  }
}

template <typename T>
void accumulate(Tensor<T>& dst, const Tensor<T>& src, T factor = T(1)) {
  for (std::size_t i = 0; i < dst.size(); ++i) dst[i] += factor * src[i];
}

}  // namespace

template <typename T>
Var<T> add(const Var<T>& a, const Var<T>& b) {
  require_same_shape(a, b, "add");
  Tensor<T> out = a.value();
  const auto& bv = b.value();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] += bv[i];
  const std::size_t ia = a.id(), ib = b.id();
  return a.tape().record(std::move(out), {a, b}, [ia, ib](Tape<T>& t, std::size_t self) {
    const auto& g = t.grad(self);
    if (t.requires_grad(ia)) accumulate(t.grad(ia), g);
    if (t.requires_grad(ib)) accumulate(t.grad(ib), g);
  });
}

template <typename T>
Var<T> sub(const Var<T>& a, const Var<T>& b) {
  require_same_shape(a, b, "sub");
  Tensor<T> out = a.value();
  const auto& bv = b.value();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] -= bv[i];
  const std::size_t ia = a.id(), ib = b.id();
  return a.tape().record(std::move(out), {a, b}, [ia, ib](Tape<T>& t, std::size_t self) {
    const auto& g = t.grad(self);
    if (t.requires_grad(ia)) accumulate(t.grad(ia), g);
    if (t.requires_grad(ib)) accumulate(t.grad(ib), g, T(-1));
  });
}

template <typename T>
Var<T> mul(const Var<T>& a, const Var<T>& b) {
  require_same_shape(a, b, "mul");
  Tensor<T> out = a.value();
  const auto& bv = b.value();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] *= bv[i];
  const std::size_t ia = a.id(), ib = b.id();
  return a.tape().record(std::move(out), {a, b}, [ia, ib](Tape<T>& t, std::size_t self) {
    const auto& g = t.grad(self);
    const auto& av = t.value(ia);
    const auto& bv = t.value(ib);
    if (t.requires_grad(ia)) {
      auto& ga = t.grad(ia);
      for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i] * bv[i];
    }
    if (t.requires_grad(ib)) {
      auto& gb = t.grad(ib);
      for (std::size_t i = 0; i < g.size(); ++i) gb[i] += g[i] * av[i];
    }
  });
}

template <typename T>
Var<T> scale(const Var<T>& a, T factor) {
  Tensor<T> out = a.value();
  for (auto& v : out.data()) v *= factor;
  const std::size_t ia = a.id();
  return a.tape().record(std::move(out), {a}, [ia, factor](Tape<T>& t, std::size_t self) {
    accumulate(t.grad(ia), t.grad(self), factor);
  });
}

template <typename T>
Var<T> exp(const Var<T>& a) {
  Tensor<T> out = a.value();
  for (auto& v : out.data()) v = std::exp(v);
  const std::size_t ia = a.id();
  return a.tape().record(std::move(out), {a}, [ia](Tape<T>& t, std::size_t self) {
    const auto& g = t.grad(self);
    const auto& y = t.value(self);
    auto& ga = t.grad(ia);
    for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i] * y[i];
  });
}

template <typename T>
Var<T> log(const Var<T>& a) {
  Tensor<T> out = a.value();
  for (auto& v : out.data()) v = std::log(v);
  const std::size_t ia = a.id();
  return a.tape().record(std::move(out), {a}, [ia](Tape<T>& t, std::size_t self) {
    const auto& g = t.grad(self);
    const auto& x = t.value(ia);
    auto& ga = t.grad(ia);
    for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i] / x[i];
  });
}

template <typename T>
Var<T> gelu(const Var<T>& a) {
  Tensor<T> out = gelu(a.value());
  const std::size_t ia = a.id();
  return a.tape().record(std::move(out), {a}, [ia](Tape<T>& t, std::size_t self) {
    const auto& g = t.grad(self);
    const auto& x = t.value(ia);
    auto& ga = t.grad(ia);
    for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i] * gelu_derivative(x[i]);
  });
}

template <typename T>
Var<T> log1m_exp(const Var<T>& a) {
  Tensor<T> out = a.value();
  for (auto& v : out.data()) v = std::log(-std::expm1(v));
  const std::size_t ia = a.id();
  return a.tape().record(std::move(out), {a}, [ia](Tape<T>& t, std::size_t self) {
    const auto& g = t.grad(self);
    const auto& x = t.value(ia);
    auto& ga = t.grad(ia);
    // d/dx log(1 - e^x) = e^x / expm1(x)
    for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i] * std::exp(x[i]) / std::expm1(x[i]);
  });
}

template <typename T>
Var<T> matmul(const Var<T>& a, const Var<T>& b) {
  require_same_tape(a, b, "matmul");
  Tensor<T> out = matmul(a.value(), b.value());
  const std::size_t ia = a.id(), ib = b.id();
  return a.tape().record(std::move(out), {a, b}, [ia, ib](Tape<T>& t, std::size_t self) {
    const auto& g = t.grad(self);
    if (t.requires_grad(ia)) matmul_nt_acc(g, t.value(ib), t.grad(ia));
    if (t.requires_grad(ib)) matmul_tn_acc(t.value(ia), g, t.grad(ib));
  });
}

template <typename T>
Var<T> matmul_nt(const Var<T>& a, const Var<T>& b) {
  require_same_tape(a, b, "matmul_nt");
  Tensor<T> out = matmul_nt(a.value(), b.value());
  const std::size_t ia = a.id(), ib = b.id();
  return a.tape().record(std::move(out), {a, b}, [ia, ib](Tape<T>& t, std::size_t self) {
    const auto& g = t.grad(self);
    if (t.requires_grad(ia)) matmul_acc(g, t.value(ib), t.grad(ia));
    if (t.requires_grad(ib)) matmul_tn_acc(g, t.value(ia), t.grad(ib));
  });
}

template <typename T>
Var<T> log_softmax(const Var<T>& a) {
  Tensor<T> out = log_softmax(a.value());
  const std::size_t ia = a.id();
  return a.tape().record(std::move(out), {a}, [ia](Tape<T>& t, std::size_t self) {
    const auto& g = t.grad(self);
    const auto& y = t.value(self);
    auto& ga = t.grad(ia);
    const std::size_t n = y.cols();
    for (std::size_t r = 0; r < y.rows(); ++r) {
      T gsum = 0;
      for (std::size_t j = 0; j < n; ++j) gsum += g[r * n + j];
      for (std::size_t j = 0; j < n; ++j) {
        ga[r * n + j] += g[r * n + j] - std::exp(y[r * n + j]) * gsum;
      }
    }
  });
}

template <typename T>
Var<T> layer_norm(const Var<T>& x, const Var<T>& gain, const Var<T>& bias, T eps) {
  require_same_tape(x, gain, "layer_norm");
  require_same_tape(x, bias, "layer_norm");
  const auto& xv = x.value();
  const std::size_t n = xv.cols(), rows = xv.rows();
  if (gain.value().size() != n || bias.value().size() != n) {
    throw DimensionError("layer_norm: gain/bias length does not match " + shape_to_string(xv.shape()));
  }
  auto xhat = std::make_shared<Tensor<T>>(xv.shape());
  auto inv = std::make_shared<std::vector<T>>(rows);
  Tensor<T> out(xv.shape());
  const auto& gv = gain.value();
  const auto& bv = bias.value();
  for (std::size_t r = 0; r < rows; ++r) {
    T mu = 0;
    for (std::size_t j = 0; j < n; ++j) mu += xv[r * n + j];
    mu /= T(n);
    T var = 0;
    for (std::size_t j = 0; j < n; ++j) {
      const T d = xv[r * n + j] - mu;
      var += d * d;
    }
    var /= T(n);
    const T s = T(1) / std::sqrt(var + eps);
    (*inv)[r] = s;
    for (std::size_t j = 0; j < n; ++j) {
      const T h = (xv[r * n + j] - mu) * s;
      (*xhat)[r * n + j] = h;
      out[r * n + j] = h * gv[j] + bv[j];
    }
  }
  const std::size_t ix = x.id(), ig = gain.id(), ib = bias.id();
  return x.tape().record(std::move(out), {x, gain, bias},
                         [ix, ig, ib, xhat, inv, n, rows](Tape<T>& t, std::size_t self) {
    const auto& g = t.grad(self);
    const auto& gv = t.value(ig);
    if (t.requires_grad(ig)) {
      auto& gg = t.grad(ig);
      for (std::size_t r = 0; r < rows; ++r)
        for (std::size_t j = 0; j < n; ++j) gg[j] += g[r * n + j] * (*xhat)[r * n + j];
    }
    if (t.requires_grad(ib)) {
      auto& gb = t.grad(ib);
      for (std::size_t r = 0; r < rows; ++r)
        for (std::size_t j = 0; j < n; ++j) gb[j] += g[r * n + j];
    }
    if (t.requires_grad(ix)) {
      auto& gx = t.grad(ix);
      for (std::size_t r = 0; r < rows; ++r) {
        T m1 = 0, m2 = 0;
        for (std::size_t j = 0; j < n; ++j) {
          const T dh = g[r * n + j] * gv[j];
          m1 += dh;
          m2 += dh * (*xhat)[r * n + j];
        }
        m1 /= T(n);
        m2 /= T(n);
        for (std::size_t j = 0; j < n; ++j) {
          const T dh = g[r * n + j] * gv[j];
          gx[r * n + j] += (*inv)[r] * (dh - m1 - (*xhat)[r * n + j] * m2);
        }
      }
    }
  });
}

template <typename T>
Var<T> sum(const Var<T>& a) {
  T total = 0;
  for (T v : a.value().data()) total += v;
  const std::size_t ia = a.id();
  return a.tape().record(Tensor<T>({1}, {total}), {a}, [ia](Tape<T>& t, std::size_t self) {
    const T g = t.grad(self)[0];
    for (auto& v : t.grad(ia).data()) v += g;
  });
}

template <typename T>
Var<T> mean(const Var<T>& a) {
  const T n = T(a.value().size());
  T total = 0;
  for (T v : a.value().data()) total += v;
  const std::size_t ia = a.id();
  return a.tape().record(Tensor<T>({1}, {total / n}), {a}, [ia, n](Tape<T>& t, std::size_t self) {
    const T g = t.grad(self)[0] / n;
    for (auto& v : t.grad(ia).data()) v += g;
  });
}

template <typename T>
Var<T> select_rows(const Var<T>& a, std::vector<std::size_t> rows) {
  const auto& av = a.value();
  const std::size_t n = av.cols();
  if (rows.empty()) throw DimensionError("select_rows: empty row list");
  Tensor<T> out({rows.size(), n});
  for (std::size_t i = 0; i < rows.size(); ++i) {
    if (rows[i] >= av.rows()) {
      throw DimensionError("select_rows: row " + std::to_string(rows[i]) + " out of range for " +
                           shape_to_string(av.shape()));
    }
    std::copy_n(av.ptr() + rows[i] * n, n, out.ptr() + i * n);
  }
  const std::size_t ia = a.id();
  return a.tape().record(std::move(out), {a}, [ia, rows = std::move(rows), n](Tape<T>& t, std::size_t self) {
    const auto& g = t.grad(self);
    auto& ga = t.grad(ia);
    for (std::size_t i = 0; i < rows.size(); ++i)
      for (std::size_t j = 0; j < n; ++j) ga[rows[i] * n + j] += g[i * n + j];
  });
}

template <typename T>
Var<T> gather_cols(const Var<T>& a, std::vector<std::size_t> cols) {
  const auto& av = a.value();
  const std::size_t rows = av.rows(), n = av.cols();
  if (cols.empty()) throw DimensionError("gather_cols: empty column list");
  Tensor<T> out({rows, cols.size()});
  for (std::size_t j = 0; j < cols.size(); ++j) {
    if (cols[j] >= n) {
      throw DimensionError("gather_cols: column " + std::to_string(cols[j]) + " out of range for " +
                           shape_to_string(av.shape()));
    }
  }
  for (std::size_t r = 0; r < rows; ++r)
    for (std::size_t j = 0; j < cols.size(); ++j) out[r * cols.size() + j] = av[r * n + cols[j]];
  const std::size_t ia = a.id();
  return a.tape().record(std::move(out), {a},
                         [ia, cols = std::move(cols), rows, n](Tape<T>& t, std::size_t self) {
    const auto& g = t.grad(self);
    auto& ga = t.grad(ia);
    for (std::size_t r = 0; r < rows; ++r)
      for (std::size_t j = 0; j < cols.size(); ++j) ga[r * n + cols[j]] += g[r * cols.size() + j];
  });
}

template <typename T>
Var<T> pick(const Var<T>& a, std::vector<std::size_t> rows, std::vector<std::size_t> cols) {
  const auto& av = a.value();
  if (rows.size() != cols.size() || rows.empty()) {
    throw DimensionError("pick: rows and cols must be nonempty and of equal length");
  }
  const std::size_t n = av.cols();
  Tensor<T> out({rows.size()});
  for (std::size_t i = 0; i < rows.size(); ++i) {
    if (rows[i] >= av.rows() || cols[i] >= n) {
      throw DimensionError("pick: index (" + std::to_string(rows[i]) + ", " + std::to_string(cols[i]) +
                           ") out of range for " + shape_to_string(av.shape()));
    }
    out[i] = av[rows[i] * n + cols[i]];
  }
  const std::size_t ia = a.id();
  return a.tape().record(std::move(out), {a},
                         [ia, rows = std::move(rows), cols = std::move(cols), n](Tape<T>& t, std::size_t self) {
    const auto& g = t.grad(self);
    auto& ga = t.grad(ia);
    for (std::size_t i = 0; i < rows.size(); ++i) ga[rows[i] * n + cols[i]] += g[i];
  });
}

template <typename T>
Var<T> embedding(const Var<T>& table, std::vector<std::size_t> ids) {
  const auto& tv = table.value();
  const std::size_t n = tv.cols();
  if (ids.empty()) throw DimensionError("embedding: empty id list");
  Tensor<T> out({ids.size(), n});
  for (std::size_t i = 0; i < ids.size(); ++i) {
    if (ids[i] >= tv.rows()) {
      throw InputError("embedding: id " + std::to_string(ids[i]) + " out of range for table " +
                       shape_to_string(tv.shape()));
    }
    std::copy_n(tv.ptr() + ids[i] * n, n, out.ptr() + i * n);
  }
  const std::size_t it = table.id();
  return table.tape().record(std::move(out), {table}, [it, ids = std::move(ids), n](Tape<T>& t, std::size_t self) {
    const auto& g = t.grad(self);
    auto& gt = t.grad(it);
    for (std::size_t i = 0; i < ids.size(); ++i)
      for (std::size_t j = 0; j < n; ++j) gt[ids[i] * n + j] += g[i * n + j];
  });
}

template <typename T>
Var<T> causal_attention(const Var<T>& q, const Var<T>& k, const Var<T>& v, std::size_t heads,
                        std::vector<Segment> segments) {
  require_same_shape(q, k, "causal_attention");
  require_same_shape(q, v, "causal_attention");
  const auto& qv = q.value();
  const auto& kv = k.value();
  const auto& vv = v.value();
  const std::size_t rows = qv.rows(), d = qv.cols();
  if (heads == 0 || d % heads != 0) {
    throw DimensionError("causal_attention: width " + std::to_string(d) + " not divisible by " +
                         std::to_string(heads) + " heads");
  }
  std::size_t covered = 0;
  std::size_t prob_count = 0;
  for (const auto& s : segments) {
    if (s.start != covered || s.length == 0) {
      throw DimensionError("causal_attention: segments must tile the rows contiguously");
    }
    covered += s.length;
    prob_count += heads * s.length * (s.length + 1) / 2;
  }
  if (covered != rows) throw DimensionError("causal_attention: segments do not cover every row");

  const std::size_t hd = d / heads;
  const T scl = T(1) / std::sqrt(T(hd));
  auto probs = std::make_shared<std::vector<T>>(prob_count);
  Tensor<T> out({rows, d});
  std::size_t off = 0;
  for (const auto& s : segments) {
    for (std::size_t h = 0; h < heads; ++h) {
      const std::size_t c0 = h * hd;
      for (std::size_t i = 0; i < s.length; ++i) {
        const std::size_t ri = s.start + i;
        T* p = probs->data() + off;
        T mx = -std::numeric_limits<T>::infinity();
        for (std::size_t j = 0; j <= i; ++j) {
          const std::size_t rj = s.start + j;
          T dot = 0;
          for (std::size_t c = 0; c < hd; ++c) dot += qv[ri * d + c0 + c] * kv[rj * d + c0 + c];
          p[j] = dot * scl;
          mx = std::max(mx, p[j]);
        }
        T total = 0;
        for (std::size_t j = 0; j <= i; ++j) {
          p[j] = std::exp(p[j] - mx);
          total += p[j];
        }
        for (std::size_t j = 0; j <= i; ++j) p[j] /= total;
        for (std::size_t j = 0; j <= i; ++j) {
          const std::size_t rj = s.start + j;
          for (std::size_t c = 0; c < hd; ++c) out[ri * d + c0 + c] += p[j] * vv[rj * d + c0 + c];
        }
        off += i + 1;
      }
    }
  }

  const std::size_t iq = q.id(), ik = k.id(), iv = v.id();
  return q.tape().record(std::move(out), {q, k, v},
                         [iq, ik, iv, heads, hd, d, scl, probs, segments = std::move(segments)](
                             Tape<T>& t, std::size_t self) {
    const auto& g = t.grad(self);
    const auto& qv = t.value(iq);
    const auto& kv = t.value(ik);
    const auto& vv = t.value(iv);
    const bool need_q = t.requires_grad(iq), need_k = t.requires_grad(ik), need_v = t.requires_grad(iv);
    Tensor<T>* gq = need_q ? &t.grad(iq) : nullptr;
    Tensor<T>* gk = need_k ? &t.grad(ik) : nullptr;
    Tensor<T>* gv = need_v ? &t.grad(iv) : nullptr;
    std::vector<T> dp;
    std::size_t off = 0;
    for (const auto& s : segments) {
      dp.resize(s.length);
      for (std::size_t h = 0; h < heads; ++h) {
        const std::size_t c0 = h * hd;
        for (std::size_t i = 0; i < s.length; ++i) {
          const std::size_t ri = s.start + i;
          const T* p = probs->data() + off;
          T weighted = 0;
          for (std::size_t j = 0; j <= i; ++j) {
            const std::size_t rj = s.start + j;
            T dot = 0;
            for (std::size_t c = 0; c < hd; ++c) dot += g[ri * d + c0 + c] * vv[rj * d + c0 + c];
            dp[j] = dot;
            weighted += p[j] * dot;
            if (gv) {
              for (std::size_t c = 0; c < hd; ++c) (*gv)[rj * d + c0 + c] += p[j] * g[ri * d + c0 + c];
            }
          }
          for (std::size_t j = 0; j <= i; ++j) {
            const std::size_t rj = s.start + j;
            const T ds = p[j] * (dp[j] - weighted) * scl;
            if (gq) {
              for (std::size_t c = 0; c < hd; ++c) (*gq)[ri * d + c0 + c] += ds * kv[rj * d + c0 + c];
            }
            if (gk) {
              for (std::size_t c = 0; c < hd; ++c) (*gk)[rj * d + c0 + c] += ds * qv[ri * d + c0 + c];
            }
          }
          off += i + 1;
        }
      }
    }
  });
}

#define FINE_INSTANTIATE_AUTODIFF(T)                                                        \
  template class Tape<T>;                                                                   \
  template Var<T> add(const Var<T>&, const Var<T>&);                                        \
  template Var<T> sub(const Var<T>&, const Var<T>&);                                        \
  template Var<T> mul(const Var<T>&, const Var<T>&);                                        \
  template Var<T> scale(const Var<T>&, T);                                                  \
  template Var<T> exp(const Var<T>&);                                                       \
  template Var<T> log(const Var<T>&);                                                       \
  template Var<T> gelu(const Var<T>&);                                                      \
  template Var<T> log1m_exp(const Var<T>&);                                                 \
  template Var<T> matmul(const Var<T>&, const Var<T>&);                                     \
  template Var<T> matmul_nt(const Var<T>&, const Var<T>&);                                  \
  template Var<T> log_softmax(const Var<T>&);                                               \
  template Var<T> layer_norm(const Var<T>&, const Var<T>&, const Var<T>&, T);               \
  template Var<T> sum(const Var<T>&);                                                       \
  template Var<T> mean(const Var<T>&);                                                      \
  template Var<T> select_rows(const Var<T>&, std::vector<std::size_t>);                     \
  template Var<T> gather_cols(const Var<T>&, std::vector<std::size_t>);                     \
  template Var<T> pick(const Var<T>&, std::vector<std::size_t>, std::vector<std::size_t>);  \
  template Var<T> embedding(const Var<T>&, std::vector<std::size_t>);                       \
  template Var<T> causal_attention(const Var<T>&, const Var<T>&, const Var<T>&, std::size_t, \
                                   std::vector<Segment>);

FINE_INSTANTIATE_AUTODIFF(float)
FINE_INSTANTIATE_AUTODIFF(double)

}  // namespace fine
