#pragma once

// Parameterized update equations for permutation-equivariant graph networks.
//
// Two token-level updates are the primitives:
//
//   gcn_update        d'_k = act(d_k V + sum_{j != k} d_j U)
//   attention_update  d'_k = FFN(d_k + sum_j xi(s_kj) d_j Wv)
//
// with pairwise scores s_kj = <d_k Wq, d_j Wk> / sqrt(r), r being the number
// of contracted components (the per-token slice width).  Without the sqrt(r)
// normalization the scores grow with the slice width and the softmax
// saturates at initialization, which stalls learning on wide slices.
// xi is the softmax over j INCLUDING the self term j = k, and FFN is a
// two-layer feed-forward map applied per token.  Representations are rows, so
// every weight right-multiplies (the transposed convention of the usual
// column form).
//
// The remaining functions generalize the two updates to one axis of a
// higher-rank representation tensor shaped {batch, set_1, ..., set_S, F}:
// parameters stay feature-wise (sized by F alone, never by any set length),
// attention scores contract over every non-token axis, and nested variants
// split the axis into contiguous subsets with separate same-subset and
// cross-subset treatment.  Everything is built from the reverse-mode kernels,
// so a forward pass under an active tape is differentiable end to end.
//
// Axis restriction: the attention sublayers act on axis 1 (tokens adjacent to
// the batch axis).  The model builder orders representation axes so that the
// recursion carrying attention always sits there.

#include <cmath>
#include <cstdint>
#include <stdexcept>
#include <string>
#include <vector>

#include "pekit/autodiff.hpp"
#include "pekit/tensor.hpp"

namespace pekit {

enum class ActivationKind { identity, rectifier };

inline Tensor activate(const Tensor& x, ActivationKind act) {
  return act == ActivationKind::rectifier ? relu(x) : x;
}

// ---------------------------------------------------------------------------
// Shape helpers (all differentiable where their inputs are tracked)
// ---------------------------------------------------------------------------

namespace gnn_detail {

inline std::int64_t trailing_product(const Tensor& x, std::int64_t from_axis) {
  std::int64_t p = 1;
  for (std::int64_t i = from_axis; i < x.rank(); ++i) p *= x.dim(i);
  return p;
}

inline std::int64_t leading_product(const Tensor& x, std::int64_t upto_axis) {
  std::int64_t p = 1;
  for (std::int64_t i = 0; i < upto_axis; ++i) p *= x.dim(i);
  return p;
}

}  // namespace gnn_detail

// Applies a {F_in, F_out} weight to the trailing feature axis of any tensor.
inline Tensor feature_linear(const Tensor& x, const Tensor& w) {
  if (w.rank() != 2 || x.dim(x.rank() - 1) != w.dim(0)) {
    throw std::invalid_argument("feature_linear: weight " + shape_str(w.shape()) +
                                " does not fit features of " + shape_str(x.shape()));
  }
  const std::int64_t rows = x.size() / x.dim(x.rank() - 1);
  Tensor flat = reshape(x, {rows, x.dim(x.rank() - 1)});
  Tensor y = matmul(flat, w);
  Shape out = x.shape();
  out.back() = w.dim(1);
  return reshape(y, out);
}

// Adds a per-feature bias {F} to the trailing axis (expanded via an untracked
// ones column so the gradient of the bias is the usual sum over positions).
inline Tensor add_feature_bias(const Tensor& x, const Tensor& b) {
  const std::int64_t f = x.dim(x.rank() - 1);
  if (b.size() != f) {
    throw std::invalid_argument("add_feature_bias: bias size mismatch");
  }
  const std::int64_t rows = x.size() / f;
  Tensor wide = matmul(Tensor::ones({rows, 1}), reshape(b, {1, f}));
  return reshape(add(reshape(x, {rows, f}), wide), x.shape());
}

// Repeats x along a new axis inserted at `axis`, producing `length` copies.
inline Tensor expand_new_axis(const Tensor& x, std::int64_t axis, std::int64_t length) {
  if (axis < 0 || axis > x.rank() || length <= 0) {
    throw std::invalid_argument("expand_new_axis: bad axis or length");
  }
  const std::int64_t outer = gnn_detail::leading_product(x, axis);
  const std::int64_t inner = x.size() / outer;
  Tensor lifted = reshape(x, {outer, 1, inner});
  Tensor wide = matmul(Tensor::ones({outer, length, 1}), lifted);
  Shape out;
  for (std::int64_t i = 0; i < axis; ++i) out.push_back(x.dim(i));
  out.push_back(length);
  for (std::int64_t i = axis; i < x.rank(); ++i) out.push_back(x.dim(i));
  return reshape(wide, out);
}

// Replaces every element with the sum over `axis` (shape preserved).
inline Tensor sum_axis_keep(const Tensor& x, std::int64_t axis) {
  Tensor pooled = sum_axis(x, axis);
  return expand_new_axis(pooled, axis, x.dim(axis));
}

// Sum over the other elements of `axis`: pooled-minus-self.
inline Tensor sum_others_axis(const Tensor& x, std::int64_t axis) {
  return sub(sum_axis_keep(x, axis), x);
}

// ---------------------------------------------------------------------------
// Graph-convolution update
// ---------------------------------------------------------------------------

// Token form on {K, F} or {B, K, F}: d'_k = act(d_k V + sum_{j != k} d_j U).
// The same routine serves any representation rank: tokens live on `axis` and
// all other axes ride along pointwise, which keeps the map equivariant to
// them for free.  `bias` (optional, {F_out}) extends the plain form with a
// per-feature offset inside the activation.
inline Tensor gcn_update(const Tensor& d, const Tensor& v, const Tensor& u,
                         ActivationKind act = ActivationKind::rectifier,
                         std::int64_t axis = -1, const Tensor* bias = nullptr) {
  const std::int64_t token_axis = axis >= 0 ? axis : (d.rank() == 2 ? 0 : 1);
  if (token_axis >= d.rank() - 1) {
    throw std::invalid_argument("gcn_update: token axis overlaps features");
  }
  Tensor self = feature_linear(d, v);
  Tensor others = feature_linear(sum_others_axis(d, token_axis), u);
  Tensor pre = add(self, others);
  if (bias != nullptr) pre = add_feature_bias(pre, *bias);
  return activate(pre, act);
}

// Nested variant: the token axis holds subset_count contiguous subsets of
// subset_size elements.  Same-subset neighbors and cross-subset mass are
// pooled separately:
//   d'_k = act(d_k V + sum_{j ~ k, j != k} d_j U_same + sum_{j !~ k} d_j U_cross)
inline Tensor nested_gcn_update(const Tensor& d, std::int64_t axis,
                                std::int64_t subset_count, std::int64_t subset_size,
                                const Tensor& v, const Tensor& u_same,
                                const Tensor& u_cross,
                                ActivationKind act = ActivationKind::rectifier,
                                const Tensor* bias = nullptr) {
  if (axis < 0 || axis >= d.rank() - 1 || d.dim(axis) != subset_count * subset_size) {
    throw std::invalid_argument("nested_gcn_update: axis does not factor");
  }
  Shape split;
  for (std::int64_t i = 0; i < axis; ++i) split.push_back(d.dim(i));
  split.push_back(subset_count);
  split.push_back(subset_size);
  for (std::int64_t i = axis + 1; i < d.rank(); ++i) split.push_back(d.dim(i));

  Tensor ds = reshape(d, split);
  Tensor same_incl = reshape(sum_axis_keep(ds, axis + 1), d.shape());
  Tensor total = sum_axis_keep(d, axis);
  Tensor same_others = sub(same_incl, d);
  Tensor cross = sub(total, same_incl);

  Tensor out = add(feature_linear(d, v), feature_linear(same_others, u_same));
  out = add(out, feature_linear(cross, u_cross));
  if (bias != nullptr) out = add_feature_bias(out, *bias);
  return activate(out, act);
}

// ---------------------------------------------------------------------------
// Attention update
// ---------------------------------------------------------------------------

struct AttentionParams {
  Tensor wq;      // {F, F_a}
  Tensor wk;      // {F, F_a}
  Tensor wv;      // {F, F}
  Tensor ffn_w1;  // {F, F_h}
  Tensor ffn_b1;  // {F_h}
  Tensor ffn_w2;  // {F_h, F}
  Tensor ffn_b2;  // {F}
};

inline Tensor ffn_apply(const Tensor& x, const AttentionParams& p) {
  Tensor h = relu(add_feature_bias(feature_linear(x, p.ffn_w1), p.ffn_b1));
  return add_feature_bias(feature_linear(h, p.ffn_w2), p.ffn_b2);
}

// Attention over the tokens on axis 1 of {B, L, ..., F} (a rank-2 {L, F}
// input is treated as one sample).  Scores contract the full per-token slice
// -- every non-token axis and the features -- so pairing two tokens compares
// their whole representations, and the softmax runs over all tokens of the
// axis including self.  `mask` (optional, {B, L, L}, untracked) is added to
// the score matrix before the softmax; entries of -1e30 silence a pair.
inline Tensor attention_update(const Tensor& d, const AttentionParams& p,
                               const Tensor* mask = nullptr) {
  const bool unbatched = d.rank() == 2;
  Tensor x = unbatched ? reshape(d, {1, d.dim(0), d.dim(1)}) : d;
  if (x.rank() < 3) {
    throw std::invalid_argument("attention_update: rank-2+ input required");
  }
  const std::int64_t batch = x.dim(0);
  const std::int64_t tokens = x.dim(1);

  Tensor q = feature_linear(x, p.wq);
  Tensor k = feature_linear(x, p.wk);
  Tensor v = feature_linear(x, p.wv);
  const std::int64_t qr = q.size() / (batch * tokens);
  const std::int64_t vr = v.size() / (batch * tokens);
  Tensor qf = reshape(q, {batch, tokens, qr});
  Tensor kf = reshape(k, {batch, tokens, qr});
  Tensor vf = reshape(v, {batch, tokens, vr});

  Tensor scores = scale(matmul(qf, kf, false, true),
                        1.0 / std::sqrt(static_cast<double>(qr)));  // {B, L, L}
  if (mask != nullptr) scores = add(scores, *mask);
  Tensor weights = softmax_axis(scores, 2);
  Tensor pooled = reshape(matmul(weights, vf), x.shape());

  Tensor out = ffn_apply(add(x, pooled), p);
  return unbatched ? reshape(out, {out.dim(1), out.dim(2)}) : out;
}

// Nested attention on axis 1 of {B, M*S, ..., F} with M subsets of S tokens.
// Same-subset attention keeps the token form restricted to the own subset
// (softmax over the subset including self, via a score mask).  Cross-subset
// interference is pooled per foreign subset with its own softmax, mapped by
// the linear `w_cross`, and summed over the foreign subsets:
//   d'_k = FFN(d_k + attn_same(k) + sum_{subsets c' != c(k)} attn_pool(k, c') W_c)
inline Tensor nested_attention_update(const Tensor& d, std::int64_t subset_count,
                                      std::int64_t subset_size,
                                      const AttentionParams& p, const Tensor& w_cross) {
  if (d.rank() < 3 || d.dim(1) != subset_count * subset_size) {
    throw std::invalid_argument("nested_attention_update: axis 1 does not factor");
  }
  const std::int64_t batch = d.dim(0);
  const std::int64_t tokens = d.dim(1);

  Tensor q = feature_linear(d, p.wq);
  Tensor k = feature_linear(d, p.wk);
  Tensor v = feature_linear(d, p.wv);
  const std::int64_t qr = q.size() / (batch * tokens);
  const std::int64_t vr = v.size() / (batch * tokens);
  Tensor qf = reshape(q, {batch, tokens, qr});
  Tensor kf = reshape(k, {batch, tokens, qr});
  Tensor vf = reshape(v, {batch, tokens, vr});
  Tensor scores = scale(matmul(qf, kf, false, true),
                        1.0 / std::sqrt(static_cast<double>(qr)));  // {B, L, L}

  // Same-subset arm: silence cross pairs, softmax over the own subset.
  Tensor same_mask({batch, tokens, tokens});
  {
    double* pm = same_mask.mutable_data();
    for (std::int64_t b = 0; b < batch; ++b) {
      for (std::int64_t i = 0; i < tokens; ++i) {
        for (std::int64_t j = 0; j < tokens; ++j) {
          const bool same = (i / subset_size) == (j / subset_size);
          pm[(b * tokens + i) * tokens + j] = same ? 0.0 : -1e30;
        }
      }
    }
  }
  Tensor w_same = softmax_axis(add(scores, same_mask), 2);
  Tensor pooled_same = reshape(matmul(w_same, vf), d.shape());

  // Cross-subset arm: normalize scores within each target subset, pool that
  // subset's values, drop the own subset, and sum what remains.  The map
  // w_cross commutes with the outer sum because it is linear.
  Tensor grouped = reshape(scores, {batch * tokens, subset_count, subset_size});
  Tensor w_group = softmax_axis(grouped, 2);  // {B*L, M, S}

  Tensor v_rep = expand_new_axis(reshape(vf, {batch, tokens * vr}), 1, tokens);
  Tensor v_blocks = reshape(v_rep, {batch * tokens * subset_count, subset_size, vr});
  Tensor w_rows = reshape(w_group, {batch * tokens * subset_count, 1, subset_size});
  Tensor per_subset = reshape(matmul(w_rows, v_blocks),
                              {batch, tokens, subset_count, vr});

  Tensor own_mask({batch, tokens, subset_count, vr});
  {
    double* pm = own_mask.mutable_data();
    std::int64_t off = 0;
    for (std::int64_t b = 0; b < batch; ++b) {
      for (std::int64_t i = 0; i < tokens; ++i) {
        for (std::int64_t c = 0; c < subset_count; ++c) {
          const double val = (i / subset_size) == c ? 1.0 : 0.0;
          for (std::int64_t r = 0; r < vr; ++r) pm[off++] = val;
        }
      }
    }
  }
  Tensor total_c = sum_axis(per_subset, 2);
  Tensor own_c = sum_axis(mul(per_subset, own_mask), 2);
  Tensor cross = feature_linear(reshape(sub(total_c, own_c), d.shape()), w_cross);

  return ffn_apply(add(add(d, pooled_same), cross), p);
}

}  // namespace pekit
