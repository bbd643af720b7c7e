#pragma once

// Define-by-run reverse-mode automatic differentiation over pekit::Tensor.
//
// A Tape records every kernel application executed while it is the active
// tape (see TapeScope).  backward() walks the record once in reverse and
// accumulates vector-Jacobian products; a second call without re-recording is
// an error.  All kernels run in fixed sequential order, so identical inputs
// and seeds yield bit-identical outputs.
//
// Kernel alphabet: add, sub, mul, matmul, sum_axis, concat_axis, relu, exp,
// log, reciprocal, clip, softmax_axis, norm, plus the zero-cost reshape.
// Elementwise binary kernels broadcast only in the scalar-versus-tensor case;
// matmul accepts rank-2 pairs and rank-3 (batched) pairs with transpose flags.

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <stdexcept>
#include <string>
#include <vector>

#include "pekit/tensor.hpp"

namespace pekit {

enum class Op {
  leaf,
  add,
  sub,
  mul,
  matmul,
  sum_axis,
  concat_axis,
  relu,
  exp,
  log,
  reciprocal,
  clip,
  softmax_axis,
  norm,
  reshape,
};

struct TapeNode {
  Op op = Op::leaf;
  std::vector<std::int64_t> parents;  // -1 marks an untracked input
  std::vector<Tensor> inputs;          // saved values needed by the backward pass
  Tensor output;
  std::int64_t axis = -1;
  double lo = 0.0, hi = 0.0;  // clip bounds
  bool ta = false, tb = false;  // matmul transpose flags
};

class Tape {
 public:
  Tape() = default;
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  // Marks a leaf whose gradient should be kept; returns the bound handle.
  Tensor watch(Tensor t) {
    TapeNode n;
    n.op = Op::leaf;
    n.output = t;
    nodes_.push_back(std::move(n));
    t.bind(this, static_cast<std::int64_t>(nodes_.size()) - 1);
    params_.push_back(t.node());
    return t;
  }

  std::int64_t record(TapeNode node, Tensor& out) {
    nodes_.push_back(std::move(node));
    const auto id = static_cast<std::int64_t>(nodes_.size()) - 1;
    out.bind(this, id);
    nodes_.back().output = out;
    return id;
  }

  bool tracks(const Tensor& t) const { return t.tape() == this && t.node() >= 0; }

  std::size_t node_count() const { return nodes_.size(); }
  bool consumed() const { return consumed_; }

  void backward(const Tensor& loss);

  // Gradient of the last backward() with respect to a tracked tensor.
  Tensor grad(const Tensor& t) const {
    if (!tracks(t)) {
      throw std::invalid_argument("tape: grad() of a tensor this tape does not track");
    }
    if (!consumed_) {
      throw std::logic_error("tape: grad() before backward()");
    }
    const auto& g = grads_[static_cast<std::size_t>(t.node())];
    if (g.empty()) return Tensor::zeros(t.shape());
    return Tensor(t.shape(), g);
  }

 private:
  void add_into(std::int64_t id, const std::vector<double>& contrib) {
    if (id < 0) return;
    auto& g = grads_[static_cast<std::size_t>(id)];
    if (g.empty()) g.assign(contrib.size(), 0.0);
    for (std::size_t i = 0; i < contrib.size(); ++i) g[i] += contrib[i];
  }

  std::vector<TapeNode> nodes_;
  std::vector<std::int64_t> params_;
  std::vector<std::vector<double>> grads_;
  bool consumed_ = false;

  friend void backward_dispatch(Tape&, const TapeNode&, const std::vector<double>&,
                                std::vector<std::vector<double>>&);
};

namespace detail {

inline Tape*& active_tape_slot() {
  thread_local Tape* t = nullptr;
  return t;
}

}  // namespace detail

inline Tape* active_tape() { return detail::active_tape_slot(); }

class TapeScope {
 public:
  explicit TapeScope(Tape& t) : prev_(detail::active_tape_slot()) {
    detail::active_tape_slot() = &t;
  }
  ~TapeScope() { detail::active_tape_slot() = prev_; }
  TapeScope(const TapeScope&) = delete;
  TapeScope& operator=(const TapeScope&) = delete;

 private:
  Tape* prev_;
};

namespace detail {

inline std::int64_t tracked_id(const Tensor& t) {
  Tape* tape = active_tape();
  return (tape && tape->tracks(t)) ? t.node() : -1;
}

inline bool any_tracked(std::initializer_list<const Tensor*> ts) {
  Tape* tape = active_tape();
  if (!tape) return false;
  for (const Tensor* t : ts) {
    if (tape->tracks(*t)) return true;
  }
  return false;
}

inline void record_unary(Op op, const Tensor& a, Tensor& out, std::int64_t axis = -1,
                         double lo = 0.0, double hi = 0.0) {
  if (!any_tracked({&a})) return;
  TapeNode n;
  n.op = op;
  n.parents = {tracked_id(a)};
  n.inputs = {a};
  n.axis = axis;
  n.lo = lo;
  n.hi = hi;
  active_tape()->record(std::move(n), out);
}

inline void record_binary(Op op, const Tensor& a, const Tensor& b, Tensor& out,
                          bool ta = false, bool tb = false) {
  if (!any_tracked({&a, &b})) return;
  TapeNode n;
  n.op = op;
  n.parents = {tracked_id(a), tracked_id(b)};
  n.inputs = {a, b};
  n.ta = ta;
  n.tb = tb;
  active_tape()->record(std::move(n), out);
}

[[noreturn]] inline void shape_error(const char* op, const Tensor& a, const Tensor& b) {
  throw std::invalid_argument(std::string(op) + ": incompatible shapes " +
                              shape_str(a.shape()) + " and " + shape_str(b.shape()));
}

}  // namespace detail

// ---------------------------------------------------------------------------
// Elementwise binary kernels (equal shapes, or scalar on either side).
// ---------------------------------------------------------------------------

namespace detail {

template <typename F>
Tensor ew_binary(const char* name, const Tensor& a, const Tensor& b, F&& f) {
  if (same_shape(a, b)) {
    Tensor out(a.shape());
    const double* pa = a.data();
    const double* pb = b.data();
    double* po = out.mutable_data();
    const std::int64_t n = a.size();
    for (std::int64_t i = 0; i < n; ++i) po[i] = f(pa[i], pb[i]);
    return out;
  }
  if (b.size() == 1) {
    Tensor out(a.shape());
    const double* pa = a.data();
    const double sb = b.data()[0];
    double* po = out.mutable_data();
    const std::int64_t n = a.size();
    for (std::int64_t i = 0; i < n; ++i) po[i] = f(pa[i], sb);
    return out;
  }
  if (a.size() == 1) {
    Tensor out(b.shape());
    const double sa = a.data()[0];
    const double* pb = b.data();
    double* po = out.mutable_data();
    const std::int64_t n = b.size();
    for (std::int64_t i = 0; i < n; ++i) po[i] = f(sa, pb[i]);
    return out;
  }
  shape_error(name, a, b);
}

}  // namespace detail

inline Tensor add(const Tensor& a, const Tensor& b) {
  Tensor out = detail::ew_binary("add", a, b, [](double x, double y) { return x + y; });
  detail::record_binary(Op::add, a, b, out);
  return out;
}

inline Tensor sub(const Tensor& a, const Tensor& b) {
  Tensor out = detail::ew_binary("sub", a, b, [](double x, double y) { return x - y; });
  detail::record_binary(Op::sub, a, b, out);
  return out;
}

inline Tensor mul(const Tensor& a, const Tensor& b) {
  Tensor out = detail::ew_binary("mul", a, b, [](double x, double y) { return x * y; });
  detail::record_binary(Op::mul, a, b, out);
  return out;
}

inline Tensor scale(const Tensor& a, double c) { return mul(a, Tensor::scalar(c)); }

// ---------------------------------------------------------------------------
// matmul: rank-2 x rank-2, or rank-3 x rank-3 with a shared leading batch dim.
// Transpose flags apply to the trailing two axes.
// ---------------------------------------------------------------------------

namespace detail {

// C[m x n] += A[m x k] * B[k x n], contiguous row-major, ikj order.
inline void mm_accum(const double* A, const double* B, double* C, std::int64_t m,
                     std::int64_t k, std::int64_t n) {
  for (std::int64_t i = 0; i < m; ++i) {
    const double* a_row = A + i * k;
    double* c_row = C + i * n;
    for (std::int64_t p = 0; p < k; ++p) {
      const double a = a_row[p];
      const double* b_row = B + p * n;
      for (std::int64_t j = 0; j < n; ++j) c_row[j] += a * b_row[j];
    }
  }
}

// Materializes the transpose of a [r x c] row-major block.
inline std::vector<double> transpose_block(const double* X, std::int64_t r, std::int64_t c) {
  std::vector<double> t(static_cast<std::size_t>(r * c));
  for (std::int64_t i = 0; i < r; ++i)
    for (std::int64_t j = 0; j < c; ++j) t[static_cast<std::size_t>(j * r + i)] = X[i * c + j];
  return t;
}

inline Tensor matmul_raw(const Tensor& a, const Tensor& b, bool ta, bool tb) {
  const bool batched = a.rank() == 3;
  if ((batched && b.rank() != 3) || (!batched && (a.rank() != 2 || b.rank() != 2))) {
    shape_error("matmul", a, b);
  }
  const std::int64_t B = batched ? a.dim(0) : 1;
  if (batched && b.dim(0) != B) shape_error("matmul", a, b);
  const std::int64_t ar = a.dim(batched ? 1 : 0), ac = a.dim(batched ? 2 : 1);
  const std::int64_t br = b.dim(batched ? 1 : 0), bc = b.dim(batched ? 2 : 1);
  const std::int64_t m = ta ? ac : ar, ka = ta ? ar : ac;
  const std::int64_t kb = tb ? bc : br, n = tb ? br : bc;
  if (ka != kb) shape_error("matmul", a, b);

  Shape out_shape = batched ? Shape{B, m, n} : Shape{m, n};
  Tensor out(out_shape);
  double* po = out.mutable_data();
  const double* pa = a.data();
  const double* pb = b.data();
  for (std::int64_t s = 0; s < B; ++s) {
    const double* As = pa + s * ar * ac;
    const double* Bs = pb + s * br * bc;
    std::vector<double> at, bt;
    if (ta) {
      at = transpose_block(As, ar, ac);
      As = at.data();
    }
    if (tb) {
      bt = transpose_block(Bs, br, bc);
      Bs = bt.data();
    }
    mm_accum(As, Bs, po + s * m * n, m, ka, n);
  }
  return out;
}

}  // namespace detail

inline Tensor matmul(const Tensor& a, const Tensor& b, bool transpose_a = false,
                     bool transpose_b = false) {
  Tensor out = detail::matmul_raw(a, b, transpose_a, transpose_b);
  detail::record_binary(Op::matmul, a, b, out, transpose_a, transpose_b);
  return out;
}

// ---------------------------------------------------------------------------
// Reductions and shape kernels.
// ---------------------------------------------------------------------------

inline Tensor sum_axis(const Tensor& a, std::int64_t axis) {
  if (axis < 0 || axis >= a.rank()) {
    throw std::invalid_argument("sum_axis: axis " + std::to_string(axis) +
                                " out of range for " + shape_str(a.shape()));
  }
  Shape out_shape;
  for (std::int64_t i = 0; i < a.rank(); ++i)
    if (i != axis) out_shape.push_back(a.dim(i));
  if (out_shape.empty()) out_shape = {1};

  std::int64_t outer = 1, inner = 1;
  for (std::int64_t i = 0; i < axis; ++i) outer *= a.dim(i);
  for (std::int64_t i = axis + 1; i < a.rank(); ++i) inner *= a.dim(i);
  const std::int64_t mid = a.dim(axis);

  Tensor out(out_shape);
  double* po = out.mutable_data();
  const double* pa = a.data();
  for (std::int64_t o = 0; o < outer; ++o) {
    for (std::int64_t m = 0; m < mid; ++m) {
      const double* src = pa + (o * mid + m) * inner;
      double* dst = po + o * inner;
      for (std::int64_t i = 0; i < inner; ++i) dst[i] += src[i];
    }
  }
  detail::record_unary(Op::sum_axis, a, out, axis);
  return out;
}

inline Tensor reshape(const Tensor& a, Shape shape) {
  if (shape_numel(shape) != a.size()) {
    throw std::invalid_argument("reshape: cannot view " + shape_str(a.shape()) +
                                " as " + shape_str(shape));
  }
  Tensor out(std::move(shape), a.values());
  detail::record_unary(Op::reshape, a, out);
  return out;
}

inline Tensor sum_all(const Tensor& a) { return sum_axis(reshape(a, {a.size()}), 0); }

inline Tensor concat_axis(const std::vector<Tensor>& parts, std::int64_t axis) {
  if (parts.empty()) throw std::invalid_argument("concat_axis: no inputs");
  const auto& s0 = parts[0].shape();
  const std::int64_t rank = parts[0].rank();
  if (axis < 0 || axis >= rank) {
    throw std::invalid_argument("concat_axis: axis out of range");
  }
  std::int64_t axis_total = 0;
  for (const auto& p : parts) {
    if (p.rank() != rank) throw std::invalid_argument("concat_axis: rank mismatch");
    for (std::int64_t i = 0; i < rank; ++i) {
      if (i != axis && p.dim(i) != s0[static_cast<std::size_t>(i)]) {
        detail::shape_error("concat_axis", parts[0], p);
      }
    }
    axis_total += p.dim(axis);
  }
  Shape out_shape = s0;
  out_shape[static_cast<std::size_t>(axis)] = axis_total;

  std::int64_t outer = 1, inner = 1;
  for (std::int64_t i = 0; i < axis; ++i) outer *= s0[static_cast<std::size_t>(i)];
  for (std::int64_t i = axis + 1; i < rank; ++i) inner *= s0[static_cast<std::size_t>(i)];

  Tensor out(out_shape);
  double* po = out.mutable_data();
  std::int64_t axis_off = 0;
  for (const auto& p : parts) {
    const std::int64_t mid = p.dim(axis);
    const double* pp = p.data();
    for (std::int64_t o = 0; o < outer; ++o) {
      for (std::int64_t m = 0; m < mid; ++m) {
        const double* src = pp + (o * mid + m) * inner;
        double* dst = po + (o * axis_total + axis_off + m) * inner;
        std::copy(src, src + inner, dst);
      }
    }
    axis_off += mid;
  }

  bool tracked = false;
  for (const auto& p : parts) {
    if (detail::any_tracked({&p})) tracked = true;
  }
  if (tracked) {
    TapeNode n;
    n.op = Op::concat_axis;
    n.axis = axis;
    for (const auto& p : parts) {
      n.parents.push_back(detail::tracked_id(p));
      n.inputs.push_back(p);
    }
    active_tape()->record(std::move(n), out);
  }
  return out;
}

// ---------------------------------------------------------------------------
// Elementwise unary kernels.
// ---------------------------------------------------------------------------

namespace detail {

template <typename F>
Tensor ew_unary(const Tensor& a, F&& f) {
  Tensor out(a.shape());
  const double* pa = a.data();
  double* po = out.mutable_data();
  const std::int64_t n = a.size();
  for (std::int64_t i = 0; i < n; ++i) po[i] = f(pa[i]);
  return out;
}

}  // namespace detail

inline Tensor relu(const Tensor& a) {
  Tensor out = detail::ew_unary(a, [](double x) { return x > 0.0 ? x : 0.0; });
  detail::record_unary(Op::relu, a, out);
  return out;
}

inline Tensor exp(const Tensor& a) {
  Tensor out = detail::ew_unary(a, [](double x) { return std::exp(x); });
  detail::record_unary(Op::exp, a, out);
  return out;
}

inline Tensor log(const Tensor& a) {
  Tensor out = detail::ew_unary(a, [](double x) { return std::log(x); });
  detail::record_unary(Op::log, a, out);
  return out;
}

inline Tensor reciprocal(const Tensor& a) {
  Tensor out = detail::ew_unary(a, [](double x) { return 1.0 / x; });
  detail::record_unary(Op::reciprocal, a, out);
  return out;
}

// Subgradient convention: 1 on [lo, hi] (boundary included), 0 outside.
inline Tensor clip(const Tensor& a, double lo, double hi) {
  if (!(lo <= hi)) throw std::invalid_argument("clip: lo > hi");
  Tensor out = detail::ew_unary(a, [lo, hi](double x) { return std::clamp(x, lo, hi); });
  detail::record_unary(Op::clip, a, out, -1, lo, hi);
  return out;
}

inline Tensor softmax_axis(const Tensor& a, std::int64_t axis) {
  if (axis < 0 || axis >= a.rank()) {
    throw std::invalid_argument("softmax_axis: axis out of range for " +
                                shape_str(a.shape()));
  }
  std::int64_t outer = 1, inner = 1;
  for (std::int64_t i = 0; i < axis; ++i) outer *= a.dim(i);
  for (std::int64_t i = axis + 1; i < a.rank(); ++i) inner *= a.dim(i);
  const std::int64_t mid = a.dim(axis);

  Tensor out(a.shape());
  const double* pa = a.data();
  double* po = out.mutable_data();
  for (std::int64_t o = 0; o < outer; ++o) {
    for (std::int64_t i = 0; i < inner; ++i) {
      const auto idx = [&](std::int64_t m) { return (o * mid + m) * inner + i; };
      double mx = pa[idx(0)];
      for (std::int64_t m = 1; m < mid; ++m) mx = std::max(mx, pa[idx(m)]);
      double z = 0.0;
      for (std::int64_t m = 0; m < mid; ++m) {
        const double e = std::exp(pa[idx(m)] - mx);
        po[idx(m)] = e;
        z += e;
      }
      const double inv = 1.0 / z;
      for (std::int64_t m = 0; m < mid; ++m) po[idx(m)] *= inv;
    }
  }
  detail::record_unary(Op::softmax_axis, a, out, axis);
  return out;
}

// Frobenius norm of the whole tensor; result has shape (1).
inline Tensor norm(const Tensor& a) {
  double acc = 0.0;
  const double* pa = a.data();
  for (std::int64_t i = 0; i < a.size(); ++i) acc += pa[i] * pa[i];
  Tensor out = Tensor::scalar(std::sqrt(acc));
  detail::record_unary(Op::norm, a, out);
  return out;
}

// ---------------------------------------------------------------------------
// Backward pass.
// ---------------------------------------------------------------------------

namespace detail {

inline std::vector<double> reduce_to_scalar_grad(const std::vector<double>& g) {
  double acc = 0.0;
  for (double v : g) acc += v;
  return {acc};
}

}  // namespace detail

inline void backward_dispatch(Tape& tape, const TapeNode& node,
                              const std::vector<double>& g,
                              std::vector<std::vector<double>>& grads) {
  const auto push = [&](std::size_t slot, std::vector<double> contrib) {
    const std::int64_t pid = node.parents[slot];
    if (pid < 0) return;
    // Scalar-broadcast operands receive a summed gradient.
    if (node.inputs[slot].size() == 1 && contrib.size() != 1) {
      contrib = detail::reduce_to_scalar_grad(contrib);
    }
    auto& dst = grads[static_cast<std::size_t>(pid)];
    if (dst.empty()) dst.assign(contrib.size(), 0.0);
    for (std::size_t i = 0; i < contrib.size(); ++i) dst[i] += contrib[i];
  };
  (void)tape;

  switch (node.op) {
    case Op::leaf:
      break;
    case Op::add: {
      push(0, g);
      push(1, g);
      break;
    }
    case Op::sub: {
      push(0, g);
      std::vector<double> ng(g.size());
      for (std::size_t i = 0; i < g.size(); ++i) ng[i] = -g[i];
      push(1, std::move(ng));
      break;
    }
    case Op::mul: {
      const Tensor& a = node.inputs[0];
      const Tensor& b = node.inputs[1];
      const std::size_t n = g.size();
      std::vector<double> da(n), db(n);
      const double* pa = a.data();
      const double* pb = b.data();
      const bool sa = a.size() == 1, sb = b.size() == 1;
      for (std::size_t i = 0; i < n; ++i) {
        da[i] = g[i] * (sb ? pb[0] : pb[i]);
        db[i] = g[i] * (sa ? pa[0] : pa[i]);
      }
      push(0, std::move(da));
      push(1, std::move(db));
      break;
    }
    case Op::matmul: {
      const Tensor& a = node.inputs[0];
      const Tensor& b = node.inputs[1];
      Tensor gt(node.output.shape(), g);
      // d(op(A) op(B)) contracted back through the transpose flags.
      Tensor da_t, db_t;
      if (!node.ta && !node.tb) {
        da_t = detail::matmul_raw(gt, b, false, true);
        db_t = detail::matmul_raw(a, gt, true, false);
      } else if (node.ta && !node.tb) {
        da_t = detail::matmul_raw(b, gt, false, true);
        db_t = detail::matmul_raw(a, gt, false, false);
      } else if (!node.ta && node.tb) {
        da_t = detail::matmul_raw(gt, b, false, false);
        db_t = detail::matmul_raw(gt, a, true, false);
      } else {
        da_t = detail::matmul_raw(b, gt, true, true);
        db_t = detail::matmul_raw(gt, a, true, true);
      }
      push(0, da_t.values());
      push(1, db_t.values());
      break;
    }
    case Op::sum_axis: {
      const Tensor& a = node.inputs[0];
      const std::int64_t axis = node.axis;
      std::int64_t outer = 1, inner = 1;
      for (std::int64_t i = 0; i < axis; ++i) outer *= a.dim(i);
      for (std::int64_t i = axis + 1; i < a.rank(); ++i) inner *= a.dim(i);
      const std::int64_t mid = a.dim(axis);
      std::vector<double> da(static_cast<std::size_t>(a.size()));
      for (std::int64_t o = 0; o < outer; ++o) {
        for (std::int64_t m = 0; m < mid; ++m) {
          const double* src = g.data() + o * inner;
          double* dst = da.data() + (o * mid + m) * inner;
          for (std::int64_t i = 0; i < inner; ++i) dst[i] = src[i];
        }
      }
      push(0, std::move(da));
      break;
    }
    case Op::concat_axis: {
      const std::int64_t axis = node.axis;
      const Shape& os = node.output.shape();
      const std::int64_t rank = node.output.rank();
      std::int64_t outer = 1, inner = 1;
      for (std::int64_t i = 0; i < axis; ++i) outer *= os[static_cast<std::size_t>(i)];
      for (std::int64_t i = axis + 1; i < rank; ++i) inner *= os[static_cast<std::size_t>(i)];
      const std::int64_t axis_total = os[static_cast<std::size_t>(axis)];
      std::int64_t axis_off = 0;
      for (std::size_t slot = 0; slot < node.inputs.size(); ++slot) {
        const Tensor& p = node.inputs[slot];
        const std::int64_t mid = p.dim(axis);
        std::vector<double> dp(static_cast<std::size_t>(p.size()));
        for (std::int64_t o = 0; o < outer; ++o) {
          for (std::int64_t m = 0; m < mid; ++m) {
            const double* src = g.data() + (o * axis_total + axis_off + m) * inner;
            double* dst = dp.data() + (o * mid + m) * inner;
            for (std::int64_t i = 0; i < inner; ++i) dst[i] = src[i];
          }
        }
        push(slot, std::move(dp));
        axis_off += mid;
      }
      break;
    }
    case Op::relu: {
      const double* pa = node.inputs[0].data();
      std::vector<double> da(g.size());
      for (std::size_t i = 0; i < g.size(); ++i) da[i] = pa[i] >= 0.0 ? g[i] : 0.0;
      push(0, std::move(da));
      break;
    }
    case Op::exp: {
      const double* po = node.output.data();
      std::vector<double> da(g.size());
      for (std::size_t i = 0; i < g.size(); ++i) da[i] = g[i] * po[i];
      push(0, std::move(da));
      break;
    }
    case Op::log: {
      const double* pa = node.inputs[0].data();
      std::vector<double> da(g.size());
      for (std::size_t i = 0; i < g.size(); ++i) da[i] = g[i] / pa[i];
      push(0, std::move(da));
      break;
    }
    case Op::reciprocal: {
      const double* po = node.output.data();
      std::vector<double> da(g.size());
      for (std::size_t i = 0; i < g.size(); ++i) da[i] = -g[i] * po[i] * po[i];
      push(0, std::move(da));
      break;
    }
    case Op::clip: {
      const double* pa = node.inputs[0].data();
      std::vector<double> da(g.size());
      for (std::size_t i = 0; i < g.size(); ++i) {
        da[i] = (pa[i] >= node.lo && pa[i] <= node.hi) ? g[i] : 0.0;
      }
      push(0, std::move(da));
      break;
    }
    case Op::softmax_axis: {
      const Tensor& y = node.output;
      const std::int64_t axis = node.axis;
      std::int64_t outer = 1, inner = 1;
      for (std::int64_t i = 0; i < axis; ++i) outer *= y.dim(i);
      for (std::int64_t i = axis + 1; i < y.rank(); ++i) inner *= y.dim(i);
      const std::int64_t mid = y.dim(axis);
      const double* py = y.data();
      std::vector<double> da(g.size());
      for (std::int64_t o = 0; o < outer; ++o) {
        for (std::int64_t i = 0; i < inner; ++i) {
          const auto idx = [&](std::int64_t m) {
            return static_cast<std::size_t>((o * mid + m) * inner + i);
          };
          double dot = 0.0;
          for (std::int64_t m = 0; m < mid; ++m) dot += g[idx(m)] * py[idx(m)];
          for (std::int64_t m = 0; m < mid; ++m) {
            da[idx(m)] = (g[idx(m)] - dot) * py[idx(m)];
          }
        }
      }
      push(0, std::move(da));
      break;
    }
    case Op::norm: {
      const Tensor& a = node.inputs[0];
      const double out = node.output.data()[0];
      const double* pa = a.data();
      std::vector<double> da(static_cast<std::size_t>(a.size()), 0.0);
      if (out > 0.0) {
        const double s = g[0] / out;
        for (std::size_t i = 0; i < da.size(); ++i) da[i] = s * pa[i];
      }
      push(0, std::move(da));
      break;
    }
    case Op::reshape: {
      push(0, g);
      break;
    }
  }
}

inline void Tape::backward(const Tensor& loss) {
  if (consumed_) {
    throw std::logic_error("tape: backward() called twice without re-recording");
  }
  if (!tracks(loss)) {
    throw std::invalid_argument("tape: backward() target is not tracked by this tape");
  }
  if (loss.size() != 1) {
    throw std::invalid_argument("tape: backward() target must have a single element");
  }
  grads_.assign(nodes_.size(), {});
  grads_[static_cast<std::size_t>(loss.node())] = {1.0};
  for (std::int64_t id = static_cast<std::int64_t>(nodes_.size()) - 1; id >= 0; --id) {
    const auto& g = grads_[static_cast<std::size_t>(id)];
    if (g.empty()) continue;
    backward_dispatch(*this, nodes_[static_cast<std::size_t>(id)], g, grads_);
  }
  consumed_ = true;
}

}  // namespace pekit
