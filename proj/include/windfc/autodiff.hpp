#pragma once

// Define-by-run reverse-mode differentiation over rank-2 tensors.
//
// A Tape records every primitive in execution order, so the record is already
// topologically sorted. backward() walks it once in reverse, accumulating
// gradients additively at fan-out. Only two broadcast forms exist: scalar (1x1)
// against any shape, and equal shapes. Bias rows are added with add_row.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <functional>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "windfc/tensor.hpp"

namespace windfc {

class Tape;

struct Var {
  Tape* tape = nullptr;
  std::size_t id = 0;

  const Tensor& value() const;
};

class Tape {
 public:
  using BackwardFn = std::function<void(const Tensor& out_grad)>;

  Tape() = default;
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  /// Differentiable input; its gradient is available after backward().
  Var leaf(Tensor value) { return push(std::move(value), true, nullptr, "leaf"); }

  /// Input that never receives a gradient.
  Var constant(Tensor value) { return push(std::move(value), false, nullptr, "constant"); }

  /// Records the output of a primitive. `fn` runs during backward only when
  /// some input requires a gradient.
  Var record(Tensor value, std::initializer_list<Var> inputs, const char* op, BackwardFn fn) {
    bool needs = false;
    for (const Var& v : inputs) {
      check_owner(v, op);
      needs = needs || nodes_[v.id].requires_grad;
    }
    return push(std::move(value), needs, needs ? std::move(fn) : nullptr, op);
  }

  Var record(Tensor value, std::span<const Var> inputs, const char* op, BackwardFn fn) {
    bool needs = false;
    for (const Var& v : inputs) {
      check_owner(v, op);
      needs = needs || nodes_[v.id].requires_grad;
    }
    return push(std::move(value), needs, needs ? std::move(fn) : nullptr, op);
  }

  const Tensor& value(Var v) const {
    check_owner(v, "value");
    return nodes_[v.id].value;
  }

  bool requires_grad(Var v) const { return nodes_[v.id].requires_grad; }

  /// Gradient of the last backward() loss with respect to `v`. Nodes that
  /// were not on any path to the loss get exact zeros.
  Tensor grad(Var v) const {
    check_owner(v, "grad");
    const Node& n = nodes_[v.id];
    return n.grad.empty() ? Tensor::zeros_like(n.value) : n.grad;
  }

  void backward(Var loss) {
    check_owner(loss, "backward");
    if (backward_done_) throw std::logic_error("backward() already ran on this tape");
    const Tensor& lv = nodes_[loss.id].value;
    if (lv.size() != 1) throw DimensionError("backward() needs a scalar loss, got " + shape_str(lv.shape()));
    backward_done_ = true;
    grad_slot(loss.id) = Tensor::full(lv.rows(), lv.cols(), 1.0);
    for (std::size_t i = loss.id + 1; i-- > 0;) {
      Node& n = nodes_[i];
      if (n.backward && !n.grad.empty()) n.backward(n.grad);
    }
  }

  /// Gradient buffer for node `id`, allocated on first touch.
  Tensor& grad_slot(std::size_t id) {
    Node& n = nodes_[id];
    if (n.grad.empty()) n.grad = Tensor::zeros_like(n.value);
    return n.grad;
  }

  bool accumulates(Var v) const { return nodes_[v.id].requires_grad; }

  std::size_t size() const noexcept { return nodes_.size(); }

 private:
  struct Node {
    Tensor value;
    Tensor grad;
    BackwardFn backward;
    bool requires_grad = false;
  };

  Var push(Tensor value, bool requires_grad, BackwardFn fn, const char* op) {
    if (!value.all_finite()) throw NumericError(std::string("non-finite value produced by ") + op);
    if (backward_done_) throw std::logic_error("tape already differentiated; start a new tape");
    nodes_.push_back(Node{std::move(value), Tensor{}, std::move(fn), requires_grad});
    return Var{this, nodes_.size() - 1};
  }

  void check_owner(Var v, const char* op) const {
    if (v.tape != this || v.id >= nodes_.size())
      throw std::logic_error(std::string(op) + ": variable does not belong to this tape");
  }

  std::vector<Node> nodes_;
  bool backward_done_ = false;
};

inline const Tensor& Var::value() const { return tape->value(*this); }

namespace kernel {

// out[MxN] += a[MxK] * b[KxN]
inline void gemm_nn(std::span<const double> a, std::span<const double> b, std::span<double> out,
                    std::size_t M, std::size_t K, std::size_t N) {
  for (std::size_t i = 0; i < M; ++i) {
    double* o = out.data() + i * N;
    for (std::size_t k = 0; k < K; ++k) {
      const double av = a[i * K + k];
      if (av == 0.0) continue;
      const double* br = b.data() + k * N;
      for (std::size_t j = 0; j < N; ++j) o[j] += av * br[j];
    }
  }
}

// out[MxN] += a[MxK] * b[NxK]^T. B is transposed once so the inner loop is a
// contiguous axpy over four output rows at a time.
inline void gemm_nt(std::span<const double> a, std::span<const double> b, std::span<double> out,
                    std::size_t M, std::size_t K, std::size_t N) {
  thread_local std::vector<double> bt;
  bt.resize(K * N);
  for (std::size_t j = 0; j < N; ++j)
    for (std::size_t k = 0; k < K; ++k) bt[k * N + j] = b[j * K + k];
  const double* B = bt.data();
  std::size_t i = 0;
  for (; i + 4 <= M; i += 4) {
    const double* a0 = a.data() + i * K;
    double* __restrict o0 = out.data() + i * N;
    double* __restrict o1 = o0 + N;
    double* __restrict o2 = o1 + N;
    double* __restrict o3 = o2 + N;
    for (std::size_t k = 0; k < K; ++k) {
      const double v0 = a0[k], v1 = a0[K + k], v2 = a0[2 * K + k], v3 = a0[3 * K + k];
      const double* __restrict br = B + k * N;
      for (std::size_t j = 0; j < N; ++j) {
        const double bv = br[j];
        o0[j] += v0 * bv;
        o1[j] += v1 * bv;
        o2[j] += v2 * bv;
        o3[j] += v3 * bv;
      }
    }
  }
  for (; i < M; ++i) {
    const double* ar = a.data() + i * K;
    double* __restrict o = out.data() + i * N;
    for (std::size_t k = 0; k < K; ++k) {
      const double av = ar[k];
      const double* __restrict br = B + k * N;
      for (std::size_t j = 0; j < N; ++j) o[j] += av * br[j];
    }
  }
}

// out[KxN] += a[MxK]^T * b[MxN]
inline void gemm_tn(std::span<const double> a, std::span<const double> b, std::span<double> out,
                    std::size_t M, std::size_t K, std::size_t N) {
  for (std::size_t i = 0; i < M; ++i) {
    const double* br = b.data() + i * N;
    for (std::size_t k = 0; k < K; ++k) {
      const double av = a[i * K + k];
      if (av == 0.0) continue;
      double* o = out.data() + k * N;
      for (std::size_t j = 0; j < N; ++j) o[j] += av * br[j];
    }
  }
}

inline double sigmoid(double x) {
  if (x >= 0.0) return 1.0 / (1.0 + std::exp(-x));
  const double e = std::exp(x);
  return e / (1.0 + e);
}

}  // namespace kernel

namespace detail {

inline void require_same_tape(Var a, Var b, const char* op) {
  if (a.tape != b.tape) throw std::logic_error(std::string(op) + ": operands live on different tapes");
}

inline bool is_scalar(const Tensor& t) { return t.size() == 1; }

enum class Broadcast { equal, scalar_left, scalar_right };

inline Broadcast broadcast_kind(const Tensor& a, const Tensor& b, const char* op) {
  if (a.shape() == b.shape()) return Broadcast::equal;
  if (is_scalar(a)) return Broadcast::scalar_left;
  if (is_scalar(b)) return Broadcast::scalar_right;
  throw DimensionError(std::string(op) + ": incompatible shapes " + shape_str(a.shape()) + " and " +
                       shape_str(b.shape()));
}

inline double sum_of(const Tensor& t) {
  double s = 0.0;
  for (double v : t.data()) s += v;
  return s;
}

template <class F>
Var unary(Var a, const char* op, F&& fwd_and_deriv) {
  const Tensor& av = a.value();
  Tensor out = Tensor::zeros_like(av);
  Tensor deriv = Tensor::zeros_like(av);
  for (std::size_t i = 0; i < av.size(); ++i) {
    auto [y, dy] = fwd_and_deriv(av[i]);
    out[i] = y;
    deriv[i] = dy;
  }
  Tape* t = a.tape;
  const std::size_t ia = a.id;
  return t->record(std::move(out), {a}, op, [t, ia, deriv = std::move(deriv)](const Tensor& g) {
    Tensor& ga = t->grad_slot(ia);
    for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i] * deriv[i];
  });
}

}  // namespace detail

inline Var matmul(Var a, Var b) {
  detail::require_same_tape(a, b, "matmul");
  const Tensor& av = a.value();
  const Tensor& bv = b.value();
  if (av.cols() != bv.rows())
    throw DimensionError("matmul: inner dimensions disagree, " + shape_str(av.shape()) + " x " +
                         shape_str(bv.shape()));
  const std::size_t M = av.rows(), K = av.cols(), N = bv.cols();
  Tensor out = Tensor::zeros(M, N);
  kernel::gemm_nn(av.data(), bv.data(), out.data(), M, K, N);
  Tape* t = a.tape;
  const std::size_t ia = a.id, ib = b.id;
  return t->record(std::move(out), {a, b}, "matmul", [t, ia, ib, M, K, N](const Tensor& g) {
    const Tensor& A = t->value(Var{t, ia});
    const Tensor& B = t->value(Var{t, ib});
    if (t->accumulates(Var{t, ia})) kernel::gemm_nt(g.data(), B.data(), t->grad_slot(ia).data(), M, N, K);
    if (t->accumulates(Var{t, ib})) kernel::gemm_tn(A.data(), g.data(), t->grad_slot(ib).data(), M, K, N);
  });
}

/// a * b^T, with b stored as [out x in]. This is the affine-layer product.
inline Var matmul_nt(Var a, Var b) {
  detail::require_same_tape(a, b, "matmul_nt");
  const Tensor& av = a.value();
  const Tensor& bv = b.value();
  if (av.cols() != bv.cols())
    throw DimensionError("matmul_nt: inner dimensions disagree, " + shape_str(av.shape()) + " x " +
                         shape_str(bv.shape()) + "^T");
  const std::size_t M = av.rows(), K = av.cols(), N = bv.rows();
  Tensor out = Tensor::zeros(M, N);
  kernel::gemm_nt(av.data(), bv.data(), out.data(), M, K, N);
  Tape* t = a.tape;
  const std::size_t ia = a.id, ib = b.id;
  return t->record(std::move(out), {a, b}, "matmul_nt", [t, ia, ib, M, K, N](const Tensor& g) {
    const Tensor& A = t->value(Var{t, ia});
    const Tensor& B = t->value(Var{t, ib});
    if (t->accumulates(Var{t, ia})) kernel::gemm_nn(g.data(), B.data(), t->grad_slot(ia).data(), M, N, K);
    if (t->accumulates(Var{t, ib})) kernel::gemm_tn(g.data(), A.data(), t->grad_slot(ib).data(), M, N, K);
  });
}

inline Var add(Var a, Var b) {
  detail::require_same_tape(a, b, "add");
  const Tensor& av = a.value();
  const Tensor& bv = b.value();
  const auto kind = detail::broadcast_kind(av, bv, "add");
  Tensor out = kind == detail::Broadcast::scalar_left ? bv : av;
  if (kind == detail::Broadcast::equal)
    for (std::size_t i = 0; i < out.size(); ++i) out[i] += bv[i];
  else if (kind == detail::Broadcast::scalar_left)
    for (std::size_t i = 0; i < out.size(); ++i) out[i] += av[0];
  else
    for (std::size_t i = 0; i < out.size(); ++i) out[i] += bv[0];
  Tape* t = a.tape;
  const std::size_t ia = a.id, ib = b.id;
  return t->record(std::move(out), {a, b}, "add", [t, ia, ib, kind](const Tensor& g) {
    for (auto [id, scalar] : {std::pair{ia, kind == detail::Broadcast::scalar_left},
                              std::pair{ib, kind == detail::Broadcast::scalar_right}}) {
      if (!t->accumulates(Var{t, id})) continue;
      Tensor& gs = t->grad_slot(id);
      if (scalar)
        gs[0] += detail::sum_of(g);
      else
        for (std::size_t i = 0; i < g.size(); ++i) gs[i] += g[i];
    }
  });
}

inline Var sub(Var a, Var b) {
  detail::require_same_tape(a, b, "sub");
  const Tensor& av = a.value();
  const Tensor& bv = b.value();
  const auto kind = detail::broadcast_kind(av, bv, "sub");
  Tensor out = Tensor::zeros_like(kind == detail::Broadcast::scalar_left ? bv : av);
  for (std::size_t i = 0; i < out.size(); ++i) {
    const double x = kind == detail::Broadcast::scalar_left ? av[0] : av[i];
    const double y = kind == detail::Broadcast::scalar_right ? bv[0] : bv[i];
    out[i] = x - y;
  }
  Tape* t = a.tape;
  const std::size_t ia = a.id, ib = b.id;
  return t->record(std::move(out), {a, b}, "sub", [t, ia, ib, kind](const Tensor& g) {
    if (t->accumulates(Var{t, ia})) {
      Tensor& gs = t->grad_slot(ia);
      if (kind == detail::Broadcast::scalar_left)
        gs[0] += detail::sum_of(g);
      else
        for (std::size_t i = 0; i < g.size(); ++i) gs[i] += g[i];
    }
    if (t->accumulates(Var{t, ib})) {
      Tensor& gs = t->grad_slot(ib);
      if (kind == detail::Broadcast::scalar_right)
        gs[0] -= detail::sum_of(g);
      else
        for (std::size_t i = 0; i < g.size(); ++i) gs[i] -= g[i];
    }
  });
}

inline Var mul(Var a, Var b) {
  detail::require_same_tape(a, b, "mul");
  const Tensor& av = a.value();
  const Tensor& bv = b.value();
  const auto kind = detail::broadcast_kind(av, bv, "mul");
  Tensor out = Tensor::zeros_like(kind == detail::Broadcast::scalar_left ? bv : av);
  for (std::size_t i = 0; i < out.size(); ++i) {
    const double x = kind == detail::Broadcast::scalar_left ? av[0] : av[i];
    const double y = kind == detail::Broadcast::scalar_right ? bv[0] : bv[i];
    out[i] = x * y;
  }
  Tape* t = a.tape;
  const std::size_t ia = a.id, ib = b.id;
  return t->record(std::move(out), {a, b}, "mul", [t, ia, ib, kind](const Tensor& g) {
    const Tensor& A = t->value(Var{t, ia});
    const Tensor& B = t->value(Var{t, ib});
    const auto at = [&](const Tensor& x, bool scalar, std::size_t i) { return scalar ? x[0] : x[i]; };
    const bool sa = kind == detail::Broadcast::scalar_left;
    const bool sb = kind == detail::Broadcast::scalar_right;
    if (t->accumulates(Var{t, ia})) {
      Tensor& gs = t->grad_slot(ia);
      for (std::size_t i = 0; i < g.size(); ++i) gs[sa ? 0 : i] += g[i] * at(B, sb, i);
    }
    if (t->accumulates(Var{t, ib})) {
      Tensor& gs = t->grad_slot(ib);
      for (std::size_t i = 0; i < g.size(); ++i) gs[sb ? 0 : i] += g[i] * at(A, sa, i);
    }
  });
}

inline Var scale(Var a, double c) {
  return detail::unary(a, "scale", [c](double x) { return std::pair{c * x, c}; });
}

inline Var sigmoid(Var a) {
  return detail::unary(a, "sigmoid", [](double x) {
    const double s = kernel::sigmoid(x);
    return std::pair{s, s * (1.0 - s)};
  });
}

inline Var tanh(Var a) {
  return detail::unary(a, "tanh", [](double x) {
    const double y = std::tanh(x);
    return std::pair{y, 1.0 - y * y};
  });
}

inline Var one_minus(Var a) {
  return detail::unary(a, "one_minus", [](double x) { return std::pair{1.0 - x, -1.0}; });
}

/// matrix[RxC] + row[1xC] added to every row.
inline Var add_row(Var m, Var row) {
  detail::require_same_tape(m, row, "add_row");
  const Tensor& mv = m.value();
  const Tensor& rv = row.value();
  if (rv.rows() != 1 || rv.cols() != mv.cols())
    throw DimensionError("add_row: row " + shape_str(rv.shape()) + " does not fit " + shape_str(mv.shape()));
  Tensor out = mv;
  const std::size_t R = mv.rows(), C = mv.cols();
  for (std::size_t r = 0; r < R; ++r)
    for (std::size_t c = 0; c < C; ++c) out(r, c) += rv[c];
  Tape* t = m.tape;
  const std::size_t im = m.id, ir = row.id;
  return t->record(std::move(out), {m, row}, "add_row", [t, im, ir, R, C](const Tensor& g) {
    if (t->accumulates(Var{t, im})) {
      Tensor& gm = t->grad_slot(im);
      for (std::size_t i = 0; i < g.size(); ++i) gm[i] += g[i];
    }
    if (t->accumulates(Var{t, ir})) {
      Tensor& gr = t->grad_slot(ir);
      for (std::size_t r = 0; r < R; ++r)
        for (std::size_t c = 0; c < C; ++c) gr[c] += g(r, c);
    }
  });
}

/// Horizontal concatenation of equal-row tensors.
inline Var concat_cols(std::span<const Var> parts) {
  if (parts.empty()) throw DimensionError("concat_cols: nothing to concatenate");
  Tape* t = parts[0].tape;
  const std::size_t R = parts[0].value().rows();
  std::vector<std::size_t> ids, widths;
  std::size_t C = 0;
  for (const Var& p : parts) {
    detail::require_same_tape(parts[0], p, "concat_cols");
    const Tensor& v = p.value();
    if (v.rows() != R)
      throw DimensionError("concat_cols: row count " + std::to_string(v.rows()) + " != " + std::to_string(R));
    ids.push_back(p.id);
    widths.push_back(v.cols());
    C += v.cols();
  }
  Tensor out = Tensor::zeros(R, C);
  std::size_t off = 0;
  for (const Var& p : parts) {
    const Tensor& v = p.value();
    for (std::size_t r = 0; r < R; ++r)
      std::copy_n(v.data().data() + r * v.cols(), v.cols(), out.data().data() + r * C + off);
    off += v.cols();
  }
  return t->record(std::move(out), parts, "concat_cols", [t, ids, widths, R, C](const Tensor& g) {
    std::size_t o = 0;
    for (std::size_t p = 0; p < ids.size(); ++p) {
      const std::size_t w = widths[p];
      if (t->accumulates(Var{t, ids[p]})) {
        Tensor& gp = t->grad_slot(ids[p]);
        for (std::size_t r = 0; r < R; ++r)
          for (std::size_t c = 0; c < w; ++c) gp(r, c) += g(r, o + c);
      }
      o += w;
    }
  });
}

inline Var concat_cols(std::initializer_list<Var> parts) {
  return concat_cols(std::span<const Var>(parts.begin(), parts.size()));
}

inline Var slice_cols(Var a, std::size_t begin, std::size_t count) {
  const Tensor& av = a.value();
  if (begin + count > av.cols() || count == 0)
    throw DimensionError("slice_cols: [" + std::to_string(begin) + ", " + std::to_string(begin + count) +
                         ") outside " + shape_str(av.shape()));
  const std::size_t R = av.rows();
  Tensor out = Tensor::zeros(R, count);
  for (std::size_t r = 0; r < R; ++r)
    for (std::size_t c = 0; c < count; ++c) out(r, c) = av(r, begin + c);
  Tape* t = a.tape;
  const std::size_t ia = a.id;
  return t->record(std::move(out), {a}, "slice_cols", [t, ia, begin, count, R](const Tensor& g) {
    Tensor& ga = t->grad_slot(ia);
    for (std::size_t r = 0; r < R; ++r)
      for (std::size_t c = 0; c < count; ++c) ga(r, begin + c) += g(r, c);
  });
}

inline Var sum(Var a) {
  Tape* t = a.tape;
  const std::size_t ia = a.id;
  return t->record(Tensor::scalar(detail::sum_of(a.value())), {a}, "sum", [t, ia](const Tensor& g) {
    Tensor& ga = t->grad_slot(ia);
    for (std::size_t i = 0; i < ga.size(); ++i) ga[i] += g[0];
  });
}

inline Var mean(Var a) {
  const double n = static_cast<double>(a.value().size());
  return scale(sum(a), 1.0 / n);
}

/// Rows of the result are columns of `table` picked by `indices`:
/// out[b, r] = table[r, indices[b]]. This is the one-hot product E e_i
/// evaluated as a lookup.
inline Var gather_columns(Var table, std::span<const std::size_t> indices) {
  const Tensor& tv = table.value();
  const std::size_t D = tv.rows(), N = tv.cols(), B = indices.size();
  Tensor out = Tensor::zeros(B, D);
  for (std::size_t b = 0; b < B; ++b) {
    if (indices[b] >= N)
      throw DimensionError("gather_columns: index " + std::to_string(indices[b]) + " outside " +
                           std::to_string(N) + " columns");
    for (std::size_t r = 0; r < D; ++r) out(b, r) = tv(r, indices[b]);
  }
  Tape* t = table.tape;
  const std::size_t it = table.id;
  std::vector<std::size_t> idx(indices.begin(), indices.end());
  return t->record(std::move(out), {table}, "gather_columns", [t, it, idx, D](const Tensor& g) {
    Tensor& gt = t->grad_slot(it);
    for (std::size_t b = 0; b < idx.size(); ++b)
      for (std::size_t r = 0; r < D; ++r) gt(r, idx[b]) += g(b, r);
  });
}

enum class Elementwise { add, sub, mul, sigmoid, tanh, one_minus };

/// Name-dispatched front end over the elementwise primitives.
inline Var elementwise(Elementwise op, std::span<const Var> inputs) {
  const std::size_t arity =
      (op == Elementwise::add || op == Elementwise::sub || op == Elementwise::mul) ? 2 : 1;
  if (inputs.size() != arity)
    throw DimensionError("elementwise: expected " + std::to_string(arity) + " inputs, got " +
                         std::to_string(inputs.size()));
  switch (op) {
    case Elementwise::add: return add(inputs[0], inputs[1]);
    case Elementwise::sub: return sub(inputs[0], inputs[1]);
    case Elementwise::mul: return mul(inputs[0], inputs[1]);
    case Elementwise::sigmoid: return sigmoid(inputs[0]);
    case Elementwise::tanh: return tanh(inputs[0]);
    case Elementwise::one_minus: return one_minus(inputs[0]);
  }
  throw std::logic_error("elementwise: unknown op");
}

}  // namespace windfc
