#pragma once

// Permutations, nested (two-tier) permutations, permutation schemes over
// tensor dimensions, and a randomized equivariance checker.
//
// Conventions.  A Permutation p maps source index i to destination p[i]:
// applying it to an axis moves the slice at i to position p[i].  A
// NestedPermutation over an axis of length subset_count * subset_size first
// moves whole subsets by `outer`, then permutes within each destination slot m
// by `inners[m]`.  This matches the matrix form
//   (outer x I) * blockdiag(inner_1 ... inner_M)
// applied as its transpose to a stacked vector, with subsets stored
// contiguously.

#include <cstdint>
#include <functional>
#include <map>
#include <numeric>
#include <stdexcept>
#include <string>
#include <vector>

#include "pekit/rng.hpp"
#include "pekit/tensor.hpp"

namespace pekit {

// ---------------------------------------------------------------------------
// Permutation
// ---------------------------------------------------------------------------

class Permutation {
 public:
  Permutation() = default;

  explicit Permutation(std::vector<std::int64_t> dest) : dest_(std::move(dest)) {
    validate();
  }

  static Permutation identity(std::int64_t n) {
    std::vector<std::int64_t> d(static_cast<std::size_t>(n));
    std::iota(d.begin(), d.end(), 0);
    return Permutation(std::move(d));
  }

  // Fisher-Yates draw from the uniform distribution on S_n.
  static Permutation random(std::int64_t n, Rng& rng) {
    std::vector<std::int64_t> d(static_cast<std::size_t>(n));
    std::iota(d.begin(), d.end(), 0);
    for (std::int64_t i = n - 1; i > 0; --i) {
      const std::int64_t j = rng.uniform_int(0, i);
      std::swap(d[static_cast<std::size_t>(i)], d[static_cast<std::size_t>(j)]);
    }
    return Permutation(std::move(d));
  }

  std::int64_t size() const { return static_cast<std::int64_t>(dest_.size()); }
  std::int64_t operator[](std::int64_t i) const { return dest_[static_cast<std::size_t>(i)]; }
  const std::vector<std::int64_t>& dest() const { return dest_; }

  Permutation inverse() const {
    std::vector<std::int64_t> inv(dest_.size());
    for (std::size_t i = 0; i < dest_.size(); ++i) {
      inv[static_cast<std::size_t>(dest_[i])] = static_cast<std::int64_t>(i);
    }
    return Permutation(std::move(inv));
  }

  // (a.then(b))[i] = b[a[i]]
  Permutation then(const Permutation& b) const {
    if (b.size() != size()) throw std::invalid_argument("permutation: compose size mismatch");
    std::vector<std::int64_t> d(dest_.size());
    for (std::size_t i = 0; i < dest_.size(); ++i) d[i] = b[dest_[i]];
    return Permutation(std::move(d));
  }

  bool is_identity() const {
    for (std::size_t i = 0; i < dest_.size(); ++i) {
      if (dest_[i] != static_cast<std::int64_t>(i)) return false;
    }
    return true;
  }

 private:
  void validate() const {
    std::vector<bool> seen(dest_.size(), false);
    for (auto d : dest_) {
      if (d < 0 || d >= static_cast<std::int64_t>(dest_.size()) || seen[static_cast<std::size_t>(d)]) {
        throw std::invalid_argument("permutation: not a bijection");
      }
      seen[static_cast<std::size_t>(d)] = true;
    }
  }

  std::vector<std::int64_t> dest_;
};

// ---------------------------------------------------------------------------
// NestedPermutation
// ---------------------------------------------------------------------------

class NestedPermutation {
 public:
  NestedPermutation() = default;

  NestedPermutation(Permutation outer, std::vector<Permutation> inners)
      : outer_(std::move(outer)), inners_(std::move(inners)) {
    if (static_cast<std::int64_t>(inners_.size()) != outer_.size()) {
      throw std::invalid_argument("nested permutation: need one inner per subset");
    }
    for (const auto& p : inners_) {
      if (p.size() != inners_[0].size()) {
        throw std::invalid_argument("nested permutation: unequal subset sizes");
      }
    }
  }

  static NestedPermutation random(std::int64_t subset_count, std::int64_t subset_size,
                                  Rng& rng) {
    Permutation outer = Permutation::random(subset_count, rng);
    std::vector<Permutation> inners;
    inners.reserve(static_cast<std::size_t>(subset_count));
    for (std::int64_t m = 0; m < subset_count; ++m) {
      inners.push_back(Permutation::random(subset_size, rng));
    }
    return NestedPermutation(std::move(outer), std::move(inners));
  }

  std::int64_t subset_count() const { return outer_.size(); }
  std::int64_t subset_size() const {
    return inners_.empty() ? 0 : inners_[0].size();
  }
  std::int64_t total() const { return subset_count() * subset_size(); }

  const Permutation& outer() const { return outer_; }
  // Inner permutation applied at destination slot m.
  const Permutation& inner(std::int64_t m) const {
    return inners_[static_cast<std::size_t>(m)];
  }

  // Destination of global index (subset s, member k).
  std::int64_t map(std::int64_t g) const {
    const std::int64_t K = subset_size();
    const std::int64_t s = g / K, k = g % K;
    const std::int64_t m = outer_[s];
    return m * K + inners_[static_cast<std::size_t>(m)][k];
  }

  // Flattened single-level view of the two-tier map.
  Permutation flatten() const {
    std::vector<std::int64_t> d(static_cast<std::size_t>(total()));
    for (std::int64_t g = 0; g < total(); ++g) d[static_cast<std::size_t>(g)] = map(g);
    return Permutation(std::move(d));
  }

 private:
  Permutation outer_;
  std::vector<Permutation> inners_;
};

// ---------------------------------------------------------------------------
// Applying permutations to tensor axes
// ---------------------------------------------------------------------------

namespace detail {

template <typename MapFn>
Tensor permute_axis_by(const Tensor& x, std::int64_t axis, std::int64_t axis_len,
                       MapFn&& dest_of) {
  if (axis < 0 || axis >= x.rank()) {
    throw std::invalid_argument("permute: axis out of range for " + shape_str(x.shape()));
  }
  if (x.dim(axis) != axis_len) {
    throw std::invalid_argument("permute: axis length " + std::to_string(x.dim(axis)) +
                                " does not match permutation size " +
                                std::to_string(axis_len));
  }
  std::int64_t outer = 1, inner = 1;
  for (std::int64_t i = 0; i < axis; ++i) outer *= x.dim(i);
  for (std::int64_t i = axis + 1; i < x.rank(); ++i) inner *= x.dim(i);

  Tensor y(x.shape());
  const double* px = x.data();
  double* py = y.mutable_data();
  for (std::int64_t o = 0; o < outer; ++o) {
    for (std::int64_t m = 0; m < axis_len; ++m) {
      const std::int64_t d = dest_of(m);
      const double* src = px + (o * axis_len + m) * inner;
      double* dst = py + (o * axis_len + d) * inner;
      std::copy(src, src + inner, dst);
    }
  }
  return y;
}

}  // namespace detail

inline Tensor apply_axis(const Tensor& x, std::int64_t axis, const Permutation& p) {
  return detail::permute_axis_by(x, axis, p.size(), [&](std::int64_t i) { return p[i]; });
}

inline Tensor apply_nested_axis(const Tensor& x, std::int64_t axis,
                                const NestedPermutation& p) {
  return detail::permute_axis_by(x, axis, p.total(),
                                 [&](std::int64_t g) { return p.map(g); });
}

// ---------------------------------------------------------------------------
// PermutationScheme: which permutation acts on each tensor dimension.
//
// Axes referencing the same slot id receive the same drawn permutation; a
// joint group is therefore expressed by reusing one slot id across several
// dimensions.  Two nested axes that share `slot` but use distinct
// `inner_slot` values share only the outer (subset-level) permutation while
// drawing independent within-subset permutations, which is the coupling used
// when rows and columns of a state are grouped by the same entities but have
// different per-entity widths.
// ---------------------------------------------------------------------------

enum class AxisPermKind { fixed, arbitrary, nested };

struct AxisPerm {
  AxisPermKind kind = AxisPermKind::fixed;
  int slot = -1;        // draw id: the permutation (arbitrary) or the outer (nested)
  int inner_slot = -1;  // draw id of the inner family (nested)
  std::int64_t size = 0;          // arbitrary: axis length
  std::int64_t subset_count = 0;  // nested
  std::int64_t subset_size = 0;   // nested

  static AxisPerm fixed_axis() { return {}; }
  static AxisPerm arbitrary(int slot, std::int64_t size) {
    AxisPerm a;
    a.kind = AxisPermKind::arbitrary;
    a.slot = slot;
    a.size = size;
    return a;
  }
  static AxisPerm nested(int outer_slot, int inner_slot, std::int64_t subset_count,
                         std::int64_t subset_size) {
    AxisPerm a;
    a.kind = AxisPermKind::nested;
    a.slot = outer_slot;
    a.inner_slot = inner_slot;
    a.subset_count = subset_count;
    a.subset_size = subset_size;
    return a;
  }
};

struct PermutationScheme {
  std::vector<AxisPerm> axes;

  // Dimension indices constrained to one permutation, grouped by slot id.
  std::vector<std::vector<int>> joint_groups() const {
    std::map<int, std::vector<int>> by_slot;
    for (std::size_t i = 0; i < axes.size(); ++i) {
      if (axes[i].kind != AxisPermKind::fixed && axes[i].slot >= 0) {
        by_slot[axes[i].slot].push_back(static_cast<int>(i));
      }
    }
    std::vector<std::vector<int>> groups;
    for (auto& [slot, dims] : by_slot) {
      if (dims.size() > 1) groups.push_back(dims);
    }
    return groups;
  }
};

// One realization of every slot referenced by one or more schemes.
struct SchemeDraw {
  std::map<int, Permutation> flat;                  // arbitrary axes / nested outers
  std::map<int, std::vector<Permutation>> inners;   // nested inner families
};

namespace detail {

inline void draw_slot(SchemeDraw& draw, const AxisPerm& a, Rng& rng) {
  if (a.kind == AxisPermKind::fixed) return;
  if (a.kind == AxisPermKind::arbitrary) {
    auto it = draw.flat.find(a.slot);
    if (it == draw.flat.end()) {
      draw.flat.emplace(a.slot, Permutation::random(a.size, rng));
    } else if (it->second.size() != a.size) {
      throw std::invalid_argument("scheme: slot " + std::to_string(a.slot) +
                                  " reused with a different size");
    }
    return;
  }
  // nested: outer shared through `slot`, inners through `inner_slot`
  auto it = draw.flat.find(a.slot);
  if (it == draw.flat.end()) {
    draw.flat.emplace(a.slot, Permutation::random(a.subset_count, rng));
  } else if (it->second.size() != a.subset_count) {
    throw std::invalid_argument("scheme: outer slot " + std::to_string(a.slot) +
                                " reused with a different subset count");
  }
  auto jt = draw.inners.find(a.inner_slot);
  if (jt == draw.inners.end()) {
    std::vector<Permutation> fam;
    fam.reserve(static_cast<std::size_t>(a.subset_count));
    for (std::int64_t m = 0; m < a.subset_count; ++m) {
      fam.push_back(Permutation::random(a.subset_size, rng));
    }
    draw.inners.emplace(a.inner_slot, std::move(fam));
  } else if (static_cast<std::int64_t>(jt->second.size()) != a.subset_count ||
             jt->second[0].size() != a.subset_size) {
    throw std::invalid_argument("scheme: inner slot " + std::to_string(a.inner_slot) +
                                " reused with different subset geometry");
  }
}

}  // namespace detail

inline SchemeDraw draw_scheme(const std::vector<const PermutationScheme*>& schemes,
                              Rng& rng) {
  SchemeDraw draw;
  for (const auto* s : schemes) {
    for (const auto& a : s->axes) detail::draw_slot(draw, a, rng);
  }
  return draw;
}

inline Tensor apply_scheme(const Tensor& x, const PermutationScheme& scheme,
                           const SchemeDraw& draw) {
  if (static_cast<std::int64_t>(scheme.axes.size()) != x.rank()) {
    throw std::invalid_argument("scheme: rank " + std::to_string(scheme.axes.size()) +
                                " does not match tensor " + shape_str(x.shape()));
  }
  Tensor y = x;
  for (std::size_t i = 0; i < scheme.axes.size(); ++i) {
    const auto& a = scheme.axes[i];
    const auto axis = static_cast<std::int64_t>(i);
    switch (a.kind) {
      case AxisPermKind::fixed:
        break;
      case AxisPermKind::arbitrary:
        y = apply_axis(y, axis, draw.flat.at(a.slot));
        break;
      case AxisPermKind::nested: {
        NestedPermutation np(draw.flat.at(a.slot), draw.inners.at(a.inner_slot));
        y = apply_nested_axis(y, axis, np);
        break;
      }
    }
  }
  return y;
}

// ---------------------------------------------------------------------------
// Equivariance checker
// ---------------------------------------------------------------------------

struct EquivarianceReport {
  bool pass = false;
  double max_abs_err = 0.0;
  std::int64_t trials = 0;
  double tol = 0.0;
};

// Checks f(permute(x)) == permute(f(x)) over randomized trials.  Permutations
// are drawn fresh each trial; slots shared between the input and output
// schemes (including joint groups) receive a single draw.
inline EquivarianceReport check_equivariance(
    const std::function<Tensor(const Tensor&)>& f, const PermutationScheme& in_scheme,
    const PermutationScheme& out_scheme, const std::function<Tensor(Rng&)>& sample_input,
    std::int64_t trials, double tol, Rng& rng) {
  EquivarianceReport report;
  report.trials = trials;
  report.tol = tol;
  for (std::int64_t t = 0; t < trials; ++t) {
    const Tensor x = sample_input(rng);
    const SchemeDraw draw = draw_scheme({&in_scheme, &out_scheme}, rng);
    const Tensor lhs = f(apply_scheme(x, in_scheme, draw));
    const Tensor rhs = apply_scheme(f(x), out_scheme, draw);
    if (!same_shape(lhs, rhs)) {
      throw std::invalid_argument("equivariance: f output shape changed under permutation");
    }
    for (std::int64_t i = 0; i < lhs.size(); ++i) {
      report.max_abs_err = std::max(report.max_abs_err,
                                    std::abs(lhs.data()[i] - rhs.data()[i]));
    }
  }
  report.pass = report.max_abs_err <= tol;
  return report;
}

// Convenience sampler: iid uniform entries in [lo, hi).
inline std::function<Tensor(Rng&)> uniform_sampler(Shape shape, double lo = -1.0,
                                                   double hi = 1.0) {
  return [shape = std::move(shape), lo, hi](Rng& rng) {
    Tensor t(shape);
    double* p = t.mutable_data();
    for (std::int64_t i = 0; i < t.size(); ++i) p[i] = rng.uniform(lo, hi);
    return t;
  };
}

}  // namespace pekit
