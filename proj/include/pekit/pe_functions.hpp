#pragma once

// Permutation-equivariant one-set function templates and their recursive
// composition.
//
// A OneSetTemplate updates every element of a set from its own value plus
// pooled views of the other elements:
//
//   kind ape1:  y_k = f(x_k, sum_{j!=k} q1(x_j))
//   kind ape2:  y_k = f(x_k, sum_{j!=k} q1(x_k, x_j))          (pairwise view)
//   kind npe1:  y_k = f(x_k, sum_{j!=k, same subset} q1(x_j),
//                      sum_{subsets i != m(k)} q2(sum_{j in i} q3(x_j)))
//   kind npe2:  y_k = f(x_k, sum_{j!=k, same subset} q1(x_k, x_j),
//                      sum_{subsets i != m(k)} q2(sum_{j in i} q3(x_k, x_j)))
//
// Elements are slices along a designated tensor axis; everything else rides
// along inside the slice, so parts can themselves be equivariant along the
// remaining dimensions.  That is how multi-dimension functions are composed:
// the outer template's parts embed the next template (see RecursionStack).
//
// Pairwise processors are the attention slots: they read (element, other)
// pairs.  Ordinary processors read one element.  Pooling excludes the element
// itself unless include_self is set (some fixed-point updates pool over all
// elements including their own).
//
// The combiner receives the element index.  Only templates participating in a
// joint permutation group may depend on it (there, positions along the two
// coupled axes correspond and the diagonal is preserved); for plain templates
// the equivariance checker will flag any index dependence.

#include <cstdint>
#include <functional>
#include <optional>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include "pekit/tensor.hpp"

namespace pekit {

// ---------------------------------------------------------------------------
// Slicing helpers (value-level; not recorded on any tape)
// ---------------------------------------------------------------------------

inline Tensor slice_axis(const Tensor& x, std::int64_t axis, std::int64_t index) {
  if (axis < 0 || axis >= x.rank()) throw std::invalid_argument("slice_axis: bad axis");
  if (index < 0 || index >= x.dim(axis)) throw std::out_of_range("slice_axis: bad index");
  std::int64_t outer = 1, inner = 1;
  for (std::int64_t i = 0; i < axis; ++i) outer *= x.dim(i);
  for (std::int64_t i = axis + 1; i < x.rank(); ++i) inner *= x.dim(i);
  const std::int64_t mid = x.dim(axis);

  // Slicing a rank-1 tensor yields a rank-0 scalar, so stack_axis inverts
  // slice_axis at every rank.
  Shape out_shape;
  for (std::int64_t i = 0; i < x.rank(); ++i)
    if (i != axis) out_shape.push_back(x.dim(i));

  Tensor y(out_shape);
  const double* px = x.data();
  double* py = y.mutable_data();
  for (std::int64_t o = 0; o < outer; ++o) {
    const double* src = px + (o * mid + index) * inner;
    std::copy(src, src + inner, py + o * inner);
  }
  return y;
}

// Stacks equally-shaped slices along a new axis at position `axis`.
inline Tensor stack_axis(const std::vector<Tensor>& slices, std::int64_t axis) {
  if (slices.empty()) throw std::invalid_argument("stack_axis: no slices");
  const Shape& es = slices[0].shape();
  if (axis < 0 || axis > static_cast<std::int64_t>(es.size())) {
    throw std::invalid_argument("stack_axis: bad axis");
  }
  for (const auto& s : slices) {
    if (s.shape() != es) throw std::invalid_argument("stack_axis: slice shapes differ");
  }
  Shape out_shape;
  for (std::int64_t i = 0; i < axis; ++i) out_shape.push_back(es[static_cast<std::size_t>(i)]);
  out_shape.push_back(static_cast<std::int64_t>(slices.size()));
  for (std::int64_t i = axis; i < static_cast<std::int64_t>(es.size()); ++i) {
    out_shape.push_back(es[static_cast<std::size_t>(i)]);
  }

  std::int64_t outer = 1, inner = 1;
  for (std::int64_t i = 0; i < axis; ++i) outer *= es[static_cast<std::size_t>(i)];
  for (std::int64_t i = axis; i < static_cast<std::int64_t>(es.size()); ++i) {
    inner *= es[static_cast<std::size_t>(i)];
  }
  const auto count = static_cast<std::int64_t>(slices.size());

  Tensor y(out_shape);
  double* py = y.mutable_data();
  for (std::int64_t s = 0; s < count; ++s) {
    const double* ps = slices[static_cast<std::size_t>(s)].data();
    for (std::int64_t o = 0; o < outer; ++o) {
      std::copy(ps + o * inner, ps + (o + 1) * inner, py + (o * count + s) * inner);
    }
  }
  return y;
}

// ---------------------------------------------------------------------------
// Template definition
// ---------------------------------------------------------------------------

enum class TemplateKind { ape1, ape2, npe1, npe2 };
enum class ProcessorKind { ordinary, attention };
enum class PoolKind { sum, mean };

inline const char* template_kind_name(TemplateKind k) {
  switch (k) {
    case TemplateKind::ape1: return "ape1";
    case TemplateKind::ape2: return "ape2";
    case TemplateKind::npe1: return "npe1";
    case TemplateKind::npe2: return "npe2";
  }
  return "?";
}

// Descriptive metadata for one processor slot (used in structure reports and
// by the model builder; the executable part is the callable next to it).
struct ProcessorSpec {
  ProcessorKind kind = ProcessorKind::ordinary;
  std::string name;
  std::vector<std::string> param_names;
  std::vector<std::int64_t> widths;
};

using UnaryProc = std::function<Tensor(const Tensor&)>;
using PairProc = std::function<Tensor(const Tensor&, const Tensor&)>;
using TemplateCombiner =
    std::function<Tensor(std::int64_t, const Tensor&, const std::vector<Tensor>&)>;

struct OneSetTemplate {
  TemplateKind kind = TemplateKind::ape1;
  std::string dim_name;
  PoolKind pool = PoolKind::sum;
  bool include_self = false;

  // Nested kinds: the set axis has subset_count contiguous subsets of
  // subset_size elements each.
  std::int64_t subset_count = 0;
  std::int64_t subset_size = 0;

  // Parts.  ape1/npe1 use ordinary q1; ape2/npe2 use pairwise q1.  npe kinds
  // additionally use q3 (ordinary or pairwise to match) and the ordinary q2
  // applied to the per-subset aggregate (identity when absent).
  UnaryProc q1_ordinary;
  PairProc q1_pair;
  UnaryProc q2;
  UnaryProc q3_ordinary;
  PairProc q3_pair;
  TemplateCombiner combine;

  std::vector<ProcessorSpec> processors;  // metadata, outermost first

  bool has_attention() const {
    for (const auto& p : processors) {
      if (p.kind == ProcessorKind::attention) return true;
    }
    return static_cast<bool>(q1_pair) || static_cast<bool>(q3_pair);
  }
};

namespace detail {

inline void pool_accumulate(std::optional<Tensor>& acc, const Tensor& t) {
  if (!acc) {
    acc = Tensor(t.shape(), t.values());
    return;
  }
  if (!same_shape(*acc, t)) {
    throw std::invalid_argument("one_set_apply: processor output shapes differ");
  }
  double* pa = acc->mutable_data();
  const double* pt = t.data();
  for (std::int64_t i = 0; i < t.size(); ++i) pa[i] += pt[i];
}

inline Tensor pool_finalize(std::optional<Tensor>&& acc, PoolKind pool,
                            std::int64_t count, const Shape& fallback_shape) {
  if (!acc) return Tensor::zeros(fallback_shape);
  if (pool == PoolKind::mean && count > 0) {
    double* p = acc->mutable_data();
    for (std::int64_t i = 0; i < acc->size(); ++i) p[i] /= static_cast<double>(count);
  }
  return *std::move(acc);
}

}  // namespace detail

// Applies the template along `set_axis` of x.  Combiner outputs are stacked
// along the same axis position; their shape may differ from the input slice.
//
// A pool with no contributors (a lone element with include_self=false, a
// one-element subset, a single subset with nothing across) arrives at the
// combiner as the zero scalar `Tensor::zeros({1})`, since the part functions
// were never called and the natural shape is unknown.  Combiners must treat a
// pooled tensor whose size does not match the expected part output as an
// all-zero pool.
inline Tensor one_set_apply(const OneSetTemplate& t, const Tensor& x,
                            std::int64_t set_axis) {
  if (set_axis < 0 || set_axis >= x.rank()) {
    throw std::invalid_argument("one_set_apply: set_axis out of range for " +
                                shape_str(x.shape()));
  }
  const std::int64_t n = x.dim(set_axis);
  const bool nested = t.kind == TemplateKind::npe1 || t.kind == TemplateKind::npe2;
  const bool pairwise = t.kind == TemplateKind::ape2 || t.kind == TemplateKind::npe2;
  if (nested) {
    if (t.subset_count * t.subset_size != n) {
      throw std::invalid_argument("one_set_apply: nested geometry " +
                                  std::to_string(t.subset_count) + "x" +
                                  std::to_string(t.subset_size) +
                                  " does not match axis length " + std::to_string(n));
    }
  }
  if (!t.combine) throw std::invalid_argument("one_set_apply: missing combiner");
  if (pairwise ? !t.q1_pair : !t.q1_ordinary) {
    throw std::invalid_argument("one_set_apply: missing q1 part");
  }
  if (nested && (pairwise ? !t.q3_pair : !t.q3_ordinary)) {
    throw std::invalid_argument("one_set_apply: missing q3 part");
  }

  std::vector<Tensor> elems;
  elems.reserve(static_cast<std::size_t>(n));
  for (std::int64_t k = 0; k < n; ++k) elems.push_back(slice_axis(x, set_axis, k));

  std::vector<Tensor> out;
  out.reserve(static_cast<std::size_t>(n));

  for (std::int64_t k = 0; k < n; ++k) {
    std::vector<Tensor> pooled;

    if (!nested) {
      std::optional<Tensor> acc;
      std::int64_t count = 0;
      for (std::int64_t j = 0; j < n; ++j) {
        if (j == k && !t.include_self) continue;
        const Tensor q = pairwise ? t.q1_pair(elems[static_cast<std::size_t>(k)],
                                              elems[static_cast<std::size_t>(j)])
                                  : t.q1_ordinary(elems[static_cast<std::size_t>(j)]);
        detail::pool_accumulate(acc, q);
        ++count;
      }
      pooled.push_back(detail::pool_finalize(std::move(acc), t.pool, count, {1}));
    } else {
      const std::int64_t m = k / t.subset_size;  // subset of element k
      // Within-subset pool, excluding the element itself.
      std::optional<Tensor> acc1;
      std::int64_t count1 = 0;
      for (std::int64_t j = m * t.subset_size; j < (m + 1) * t.subset_size; ++j) {
        if (j == k && !t.include_self) continue;
        const Tensor q = pairwise ? t.q1_pair(elems[static_cast<std::size_t>(k)],
                                              elems[static_cast<std::size_t>(j)])
                                  : t.q1_ordinary(elems[static_cast<std::size_t>(j)]);
        detail::pool_accumulate(acc1, q);
        ++count1;
      }
      pooled.push_back(detail::pool_finalize(std::move(acc1), t.pool, count1, {1}));

      // Cross-subset pool: aggregate each other subset through q3, transform
      // with q2 (identity when absent), then pool over subsets.
      std::optional<Tensor> acc2;
      std::int64_t count2 = 0;
      for (std::int64_t i = 0; i < t.subset_count; ++i) {
        if (i == m) continue;
        std::optional<Tensor> sub;
        for (std::int64_t j = i * t.subset_size; j < (i + 1) * t.subset_size; ++j) {
          const Tensor q = pairwise ? t.q3_pair(elems[static_cast<std::size_t>(k)],
                                                elems[static_cast<std::size_t>(j)])
                                    : t.q3_ordinary(elems[static_cast<std::size_t>(j)]);
          detail::pool_accumulate(sub, q);
        }
        Tensor agg = detail::pool_finalize(std::move(sub), PoolKind::sum, t.subset_size, {1});
        detail::pool_accumulate(acc2, t.q2 ? t.q2(agg) : agg);
        ++count2;
      }
      pooled.push_back(detail::pool_finalize(std::move(acc2), t.pool, count2, {1}));
    }

    out.push_back(t.combine(k, elems[static_cast<std::size_t>(k)], pooled));
  }

  return stack_axis(out, set_axis);
}

// ---------------------------------------------------------------------------
// Recursive composition
// ---------------------------------------------------------------------------

// One level of a recursive composition: a template acting along an axis.  The
// outermost level is executable on the full tensor; the parts of level l
// embed the structure of level l+1 (they are wired that way when the stack is
// built), so inner levels here mainly carry structure for reporting and
// validation.
struct RecursionLevel {
  OneSetTemplate tmpl;
  std::int64_t axis = 0;
};

struct OutputFunctionSpec {
  std::int64_t axis_a = 0;
  std::int64_t axis_b = 0;
  // Block sizes along the two axes.  With sizes > 1 the diagonal becomes a
  // block diagonal: positions whose block indices (index / size) agree.  The
  // axes then need equal block counts rather than equal lengths.
  std::int64_t subset_size_a = 1;
  std::int64_t subset_size_b = 1;
};

struct RecursionReport {
  std::string dim;
  TemplateKind kind = TemplateKind::ape1;
  bool attention = false;
  bool include_self = false;
  PoolKind pool = PoolKind::sum;
  std::vector<ProcessorSpec> processors;
};

struct StructureReport {
  std::vector<RecursionReport> recursions;
  bool has_output_function = false;

  // Number of templates whose processor set contains at least one attention
  // (pairwise) slot.  A nested template with two pairwise parts counts once.
  int attention_template_count() const {
    int c = 0;
    for (const auto& r : recursions) c += r.attention ? 1 : 0;
    return c;
  }

  // Number of individual attention processor slots across all templates.
  int attention_processor_count() const {
    int c = 0;
    for (const auto& r : recursions) {
      for (const auto& p : r.processors) c += p.kind == ProcessorKind::attention ? 1 : 0;
    }
    return c;
  }

  std::string to_string() const {
    std::ostringstream os;
    for (std::size_t i = 0; i < recursions.size(); ++i) {
      const auto& r = recursions[i];
      os << "recursion " << i + 1 << ": dim=" << r.dim << " kind="
         << template_kind_name(r.kind) << (r.attention ? " [attention]" : "")
         << (r.include_self ? " pool=all" : " pool=others")
         << (r.pool == PoolKind::mean ? " mean" : " sum") << "\n";
      for (const auto& p : r.processors) {
        os << "  part " << p.name << ": "
           << (p.kind == ProcessorKind::attention ? "attention" : "ordinary") << "\n";
      }
    }
    os << "output function: " << (has_output_function ? "yes" : "no") << "\n";
    return os.str();
  }
};

struct RecursionStack {
  std::vector<RecursionLevel> levels;  // outermost first
  std::optional<OutputFunctionSpec> output;

  StructureReport report() const {
    StructureReport r;
    for (const auto& level : levels) {
      RecursionReport rr;
      rr.dim = level.tmpl.dim_name;
      rr.kind = level.tmpl.kind;
      rr.attention = level.tmpl.has_attention();
      rr.include_self = level.tmpl.include_self;
      rr.pool = level.tmpl.pool;
      rr.processors = level.tmpl.processors;
      r.recursions.push_back(std::move(rr));
    }
    r.has_output_function = output.has_value();
    return r;
  }
};

// Replaces x with phi(x) only where the (block) indices along the two coupled
// axes agree; everything off that diagonal passes through.  This is the
// upgrade from two-dimension equivariance to joint equivariance: with a shared
// permutation on both axes the diagonal maps onto itself.  Block sizes > 1
// widen the diagonal to whole blocks, for representations whose coupled axes
// enumerate subsets (e.g. receive antennas per user against streams per user):
// there the shared permutation moves blocks, so the preserved region is the
// block diagonal.
inline Tensor output_function(const Tensor& phi_x, const Tensor& x, std::int64_t axis_a,
                              std::int64_t axis_b, std::int64_t block_a = 1,
                              std::int64_t block_b = 1) {
  if (!same_shape(phi_x, x)) {
    throw std::invalid_argument("output_function: shapes differ: " +
                                shape_str(phi_x.shape()) + " vs " + shape_str(x.shape()));
  }
  if (axis_a == axis_b || axis_a < 0 || axis_b < 0 || axis_a >= x.rank() ||
      axis_b >= x.rank()) {
    throw std::invalid_argument("output_function: need two distinct axes");
  }
  if (block_a < 1 || block_b < 1 || x.dim(axis_a) % block_a != 0 ||
      x.dim(axis_b) % block_b != 0 ||
      x.dim(axis_a) / block_a != x.dim(axis_b) / block_b) {
    throw std::invalid_argument("output_function: axes need equal block counts");
  }
  std::vector<std::int64_t> strides(static_cast<std::size_t>(x.rank()), 1);
  for (std::int64_t i = x.rank() - 2; i >= 0; --i) {
    strides[static_cast<std::size_t>(i)] =
        strides[static_cast<std::size_t>(i + 1)] * x.dim(i + 1);
  }
  Tensor y(x.shape(), x.values());
  double* py = y.mutable_data();
  const double* pp = phi_x.data();
  const std::int64_t total = x.size();
  for (std::int64_t off = 0; off < total; ++off) {
    const std::int64_t ia = (off / strides[static_cast<std::size_t>(axis_a)]) % x.dim(axis_a);
    const std::int64_t ib = (off / strides[static_cast<std::size_t>(axis_b)]) % x.dim(axis_b);
    if (ia / block_a == ib / block_b) py[off] = pp[off];
  }
  return y;
}

// Executes the composition: the outermost template runs along its axis; inner
// levels are embedded in its parts.  The optional output function is applied
// last against the original input.
inline Tensor recursive_compose(const RecursionStack& stack, const Tensor& x) {
  if (stack.levels.empty()) {
    throw std::invalid_argument("recursive_compose: empty stack");
  }
  Tensor y = one_set_apply(stack.levels[0].tmpl, x, stack.levels[0].axis);
  if (stack.output) {
    y = output_function(y, x, stack.output->axis_a, stack.output->axis_b,
                        stack.output->subset_size_a, stack.output->subset_size_b);
  }
  return y;
}

}  // namespace pekit
