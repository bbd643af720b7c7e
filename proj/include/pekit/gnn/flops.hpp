#pragma once

// Analytic floating-point operation counts for a built model, per sample.
//
// Counts follow the stack structure rather than instrumenting execution: a
// multiply-accumulate is 2 flops, activations and softmax bookkeeping are
// counted with small per-element constants.  The breakdown separates
//
//   linear_stage     feature-wise maps: embeddings, Q/K/V/value projections,
//                    feed-forward combiners, graph-convolution weights
//   attention_stage  the pairwise-only work: score contractions, softmax,
//                    weighted aggregation -- everything that scales with the
//                    square of the attended set
//   pooling_stage    sums over a set axis and their broadcast counterparts
//   output_head      decision-variable map and the power rescale
//
// The split is what makes the scaling claims checkable: the attention stage
// grows quadratically in the attended set and linearly in every other set,
// while every other stage grows linearly in all sets.  A model with attention
// processors on every recursion (the all-attention comparison point) pays the
// quadratic price once per set, which is why its total exceeds the single-
// attention design by roughly the product of the non-attended set sizes.

#include <cstdint>
#include <stdexcept>
#include <vector>

#include "pekit/gnn/model.hpp"

namespace pekit {

struct FlopReport {
  double embedding = 0.0;
  double linear_stage = 0.0;
  double attention_stage = 0.0;
  double pooling_stage = 0.0;
  double output_head = 0.0;

  double total() const {
    return embedding + linear_stage + attention_stage + pooling_stage + output_head;
  }
};

namespace gnn_detail {

// Pairwise-only cost of one attention recursion over an axis of length n with
// per-token slices of r = (product of other set lengths) * features entries:
// scores n^2 * r MACs, weighted aggregation n^2 * r MACs, softmax ~5 flops
// per score.
inline double attention_pair_cost(double n, double r) {
  return 2.0 * n * n * r + 2.0 * n * n * r + 5.0 * n * n;
}

}  // namespace gnn_detail

// Per-sample forward cost of `model` instantiated at the given set lengths
// (one length per descriptor, in the model's axis order).  `all_attention`
// prices the misaligned variant that uses attention processors on every
// recursion instead of only the first.
inline FlopReport count_flops(const GnnModel& model,
                              const std::vector<std::int64_t>& lengths,
                              bool all_attention = false) {
  if (lengths.size() != model.set_count()) {
    throw std::invalid_argument("count_flops: one length per set required");
  }
  double n_total = 1.0;
  for (std::size_t s = 0; s < lengths.size(); ++s) {
    const auto& d = model.descriptors[s];
    if (lengths[s] <= 0) throw std::invalid_argument("count_flops: lengths must be positive");
    if (d.kind == SetKind::nested && lengths[s] != d.subset_count * d.subset_size) {
      throw std::invalid_argument("count_flops: nested length mismatch");
    }
    n_total *= static_cast<double>(lengths[s]);
  }
  const double f = static_cast<double>(model.widths.hidden);
  const double fh = static_cast<double>(model.widths.ffn_hidden);
  const double fin = static_cast<double>(model.widths.input);

  FlopReport rep;
  rep.embedding = n_total * (2.0 * fin * f + f);

  for (std::int64_t layer = 0; layer < model.layer_count; ++layer) {
    for (std::size_t s = 0; s < model.set_count(); ++s) {
      const auto& d = model.descriptors[s];
      const double n = static_cast<double>(lengths[s]);
      const bool attn =
          all_attention || static_cast<std::int64_t>(s) == model.attention_level;
      if (attn) {
        // Projections and the feed-forward combiner are feature-wise.
        const double projections = d.kind == SetKind::nested ? 4.0 : 3.0;
        rep.linear_stage += n_total * projections * 2.0 * f * f;
        rep.linear_stage += n_total * (2.0 * f * fh + fh + 2.0 * fh * f + f);
        const double r = (n_total / n) * f;
        rep.attention_stage += gnn_detail::attention_pair_cost(n, r);
        if (d.kind == SetKind::nested) {
          // The cross-subset arm re-pools per foreign subset: one more
          // n^2 * r aggregation plus its own softmax normalization.
          rep.attention_stage += 2.0 * n * n * r + 5.0 * n * n;
        }
      } else {
        const double maps = d.kind == SetKind::nested ? 3.0 : 2.0;
        rep.linear_stage += n_total * (maps * 2.0 * f * f + 2.0 * f);
        rep.pooling_stage += n_total * f * (d.kind == SetKind::nested ? 4.0 : 2.0);
      }
    }
  }

  rep.output_head = n_total * 2.0 * 2.0 * f + 3.0 * n_total + 20.0;
  return rep;
}

// Least-squares slope of log(y) against log(x); the scaling-exponent oracle
// used by the complexity checks.
inline double log_log_slope(const std::vector<double>& x, const std::vector<double>& y) {
  if (x.size() != y.size() || x.size() < 2) {
    throw std::invalid_argument("log_log_slope: need matching series of length >= 2");
  }
  const double n = static_cast<double>(x.size());
  double sx = 0.0, sy = 0.0, sxx = 0.0, sxy = 0.0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    const double lx = std::log(x[i]);
    const double ly = std::log(y[i]);
    sx += lx;
    sy += ly;
    sxx += lx * lx;
    sxy += lx * ly;
  }
  return (n * sxy - sx * sy) / (n * sxx - sx * sx);
}

}  // namespace pekit
