#pragma once

// Building permutation-equivariant graph networks from a problem description.
//
// A problem is described by its sets: one SetDescriptor per set dimension,
// stating whether the set is normal or nested, whether it is jointly permuted
// with another set, and whether interference lives on that dimension and is
// visible in the environmental parameters.  From that list alone the builder
// derives the network: one recursion per set, the interference-carrying set
// (interference present but not measurable in the parameters) moved to the
// first recursion with attention processors, APE templates for normal sets
// and NPE templates for nested ones, and an output-function splice whenever
// two sets must be permuted jointly.  Asking for two interference sets that
// both qualify is a contract violation and throws.
//
// The representation is a tensor {batch, set_1, ..., set_S, F}; set s of the
// (possibly reordered) descriptor list owns axis s+1, so the attention
// recursion always acts on axis 1.  Every parameter is sized by the feature
// widths alone -- never by a set length -- which is what makes one trained
// model instantiable at any problem size.  The stack() view exposes the same
// recursion structure as metadata over the pe-function templates; forward()
// executes it batched through the reverse-mode kernels so the model is
// trainable.  An output head maps final representations to a complex matrix
// row per (axis-1, axis-2) position, rescaled into the power budget.

#include <array>
#include <cstdint>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include "pekit/autodiff.hpp"
#include "pekit/gnn/layers.hpp"
#include "pekit/pe_functions.hpp"
#include "pekit/permutation.hpp"
#include "pekit/rng.hpp"
#include "pekit/serialize.hpp"
#include "pekit/tensor.hpp"

namespace pekit {

// ---------------------------------------------------------------------------
// Problem description
// ---------------------------------------------------------------------------

enum class SetKind { normal, nested, nested3 };

inline const char* set_kind_name(SetKind k) {
  switch (k) {
    case SetKind::normal: return "normal";
    case SetKind::nested: return "nested";
    case SetKind::nested3: return "nested3";
  }
  return "?";
}

inline SetKind set_kind_from_name(const std::string& s) {
  if (s == "normal") return SetKind::normal;
  if (s == "nested") return SetKind::nested;
  if (s == "nested3") return SetKind::nested3;
  throw std::invalid_argument("unknown set kind '" + s + "'");
}

struct SetDescriptor {
  std::string name;
  SetKind kind = SetKind::normal;
  // Nested kinds pin their factorization; normal sets are length-free and
  // take their length from the input tensor.
  std::int64_t subset_count = 1;
  std::int64_t subset_size = 1;
  // 0 = independent; descriptors sharing a nonzero id are permuted jointly.
  int joint_group = 0;
  bool interference_present = false;
  bool interference_in_parameters = false;

  bool qualifies_for_attention() const {
    return interference_present && !interference_in_parameters;
  }
};

struct GnnWidths {
  std::int64_t input = 2;
  std::int64_t hidden = 64;
  std::int64_t ffn_hidden = 128;
};

// How the builder places attention processors.  `automatic` follows the
// descriptors; the other two exist for ablation arms only: `none` strips
// attention everywhere, `forced` puts it on a chosen set regardless of its
// interference flags (the deliberately misaligned control).
enum class AttentionPlacement { automatic, none, forced };

struct GnnBuildOptions {
  AttentionPlacement placement = AttentionPlacement::automatic;
  std::size_t forced_set = 0;  // index into the descriptor list when forced
};

// ---------------------------------------------------------------------------
// Model
// ---------------------------------------------------------------------------

class GnnModel {
 public:
  std::vector<SetDescriptor> descriptors;  // axis order: descriptor s -> axis s+1
  GnnWidths widths;
  std::int64_t layer_count = 2;
  std::int64_t attention_level = -1;  // recursion with attention processors, -1 = none
  std::optional<std::array<std::size_t, 2>> joint_pair;  // descriptor indices spliced
  std::vector<NamedTensor> params;

  std::size_t set_count() const { return descriptors.size(); }

  std::int64_t param_count() const {
    std::int64_t n = 0;
    for (const auto& p : params) n += p.value.size();
    return n;
  }

  std::vector<Tensor> values() const {
    std::vector<Tensor> out;
    out.reserve(params.size());
    for (const auto& p : params) out.push_back(p.value);
    return out;
  }

  std::size_t index_of(const std::string& name) const {
    for (std::size_t i = 0; i < params.size(); ++i) {
      if (params[i].name == name) return i;
    }
    throw std::invalid_argument("gnn: no parameter named '" + name + "'");
  }

  // -------------------------------------------------------------------------
  // Forward pass
  // -------------------------------------------------------------------------

  // x: {batch, n_1, ..., n_S, input_width}; p: values aligned with `params`
  // (pass tape-watched copies to differentiate).  Returns the final
  // representations {batch, n_1, ..., n_S, hidden}.
  Tensor forward(const Tensor& x, const std::vector<Tensor>& p) const {
    validate_input(x);
    if (p.size() != params.size()) {
      throw std::invalid_argument("gnn: parameter vector size mismatch");
    }
    Tensor d = add_feature_bias(feature_linear(x, p[index_of("embed.w")]),
                                p[index_of("embed.b")]);
    for (std::int64_t layer = 0; layer < layer_count; ++layer) {
      const Tensor base = d;
      for (std::size_t s = 0; s < descriptors.size(); ++s) {
        d = apply_level(d, layer, s, p);
      }
      if (joint_pair) d = splice_joint(d, base);
    }
    return d;
  }

  Tensor forward(const Tensor& x) const { return forward(x, values()); }

  // Decision-variable head: for each (axis-1, axis-2) position the final
  // representation maps linearly to a (real, imaginary) pair, and each batch
  // sample's matrix is rescaled by sqrt(budget) / max(||W||_F, sqrt(budget))
  // so the emitted power never exceeds the budget.
  struct PrecoderPair {
    Tensor real;  // {batch, n_1, n_2}
    Tensor imag;  // {batch, n_1, n_2}
  };

  PrecoderPair precoder_pair(const Tensor& x, const std::vector<Tensor>& p,
                             double power_budget) const {
    if (set_count() != 2) {
      throw std::invalid_argument("gnn: precoder head needs exactly two sets");
    }
    Tensor d = forward(x, p);
    const std::int64_t batch = d.dim(0);
    const std::int64_t cells = d.dim(1) * d.dim(2);
    Tensor re = reshape(feature_linear(d, p[index_of("head.re")]), {batch, cells});
    Tensor im = reshape(feature_linear(d, p[index_of("head.im")]), {batch, cells});

    Tensor sq = add(sum_axis(mul(re, re), 1), sum_axis(mul(im, im), 1));  // {B}
    Tensor capped = clip(sq, power_budget, 1e300);
    Tensor denom = pekit::exp(scale(pekit::log(capped), 0.5));
    Tensor factor = scale(reciprocal(denom), std::sqrt(power_budget));  // {B}
    Tensor wide = matmul(reshape(factor, {batch, 1}), Tensor::ones({1, cells}));
    const Shape grid = {batch, d.dim(1), d.dim(2)};
    return {reshape(mul(re, wide), grid), reshape(mul(im, wide), grid)};
  }

  // The pair stacked on a new trailing axis: {batch, n_1, n_2, 2}.
  Tensor precoder_output(const Tensor& x, const std::vector<Tensor>& p,
                         double power_budget) const {
    PrecoderPair w = precoder_pair(x, p, power_budget);
    const Shape lifted = {w.real.dim(0), w.real.dim(1), w.real.dim(2), 1};
    return concat_axis({reshape(w.real, lifted), reshape(w.imag, lifted)}, 3);
  }

  Tensor precoder_output(const Tensor& x, double power_budget) const {
    return precoder_output(x, values(), power_budget);
  }

  // -------------------------------------------------------------------------
  // Structure view
  // -------------------------------------------------------------------------

  // The recursion structure over the pe-function templates.  Levels carry
  // kind/dimension/processor metadata; execution happens in forward(), which
  // implements the same update batched (the kernels must run under a tape to
  // be trainable, which the per-element template closures are not).
  RecursionStack stack() const {
    RecursionStack st;
    for (std::size_t s = 0; s < descriptors.size(); ++s) {
      const auto& ds = descriptors[s];
      const bool attn = static_cast<std::int64_t>(s) == attention_level;
      OneSetTemplate t;
      t.dim_name = ds.name;
      t.include_self = attn;  // the attention softmax runs over all tokens
      if (ds.kind == SetKind::normal) {
        t.kind = attn ? TemplateKind::ape2 : TemplateKind::ape1;
      } else {
        t.kind = attn ? TemplateKind::npe2 : TemplateKind::npe1;
        t.subset_count = ds.subset_count;
        t.subset_size = ds.subset_size;
      }
      const bool last = s + 1 == descriptors.size();
      const std::string stage = last ? "feed-forward " : "";
      if (attn) {
        if (ds.kind == SetKind::normal) {
          t.processors = {{ProcessorKind::attention, stage + "token-attention", {}, {}}};
        } else {
          t.processors = {
              {ProcessorKind::attention, stage + "same-subset-attention", {}, {}},
              {ProcessorKind::attention, stage + "cross-subset-attention", {}, {}}};
        }
      } else {
        if (ds.kind == SetKind::normal) {
          t.processors = {{ProcessorKind::ordinary, stage + "neighbor-aggregate", {}, {}}};
        } else {
          t.processors = {
              {ProcessorKind::ordinary, stage + "same-subset-aggregate", {}, {}},
              {ProcessorKind::ordinary, stage + "cross-subset-aggregate", {}, {}}};
        }
      }
      st.levels.push_back({std::move(t), static_cast<std::int64_t>(s) + 1});
    }
    if (joint_pair) {
      const auto& a = descriptors[(*joint_pair)[0]];
      const auto& b = descriptors[(*joint_pair)[1]];
      st.output = OutputFunctionSpec{
          static_cast<std::int64_t>((*joint_pair)[0]) + 1,
          static_cast<std::int64_t>((*joint_pair)[1]) + 1,
          a.kind == SetKind::nested ? a.subset_size : 1,
          b.kind == SetKind::nested ? b.subset_size : 1};
    }
    return st;
  }

  StructureReport report() const { return stack().report(); }

 private:
  void validate_input(const Tensor& x) const {
    const std::int64_t want_rank = static_cast<std::int64_t>(set_count()) + 2;
    if (x.rank() != want_rank) {
      throw std::invalid_argument("gnn: input rank " + std::to_string(x.rank()) +
                                  ", expected " + std::to_string(want_rank));
    }
    if (x.dim(x.rank() - 1) != widths.input) {
      throw std::invalid_argument("gnn: input feature width mismatch");
    }
    for (std::size_t s = 0; s < descriptors.size(); ++s) {
      const auto& ds = descriptors[s];
      const std::int64_t len = x.dim(static_cast<std::int64_t>(s) + 1);
      if (ds.kind == SetKind::nested && len != ds.subset_count * ds.subset_size) {
        throw std::invalid_argument("gnn: axis for nested set '" + ds.name +
                                    "' does not match its factorization");
      }
    }
    if (joint_pair) {
      const auto& a = descriptors[(*joint_pair)[0]];
      const auto& b = descriptors[(*joint_pair)[1]];
      const std::int64_t la = x.dim(static_cast<std::int64_t>((*joint_pair)[0]) + 1);
      const std::int64_t lb = x.dim(static_cast<std::int64_t>((*joint_pair)[1]) + 1);
      const std::int64_t blocks_a = a.kind == SetKind::nested ? a.subset_count : la;
      const std::int64_t blocks_b = b.kind == SetKind::nested ? b.subset_count : lb;
      if (blocks_a != blocks_b) {
        throw std::invalid_argument("gnn: joint sets need equal block counts");
      }
    }
  }

  Tensor apply_level(const Tensor& d, std::int64_t layer, std::size_t s,
                     const std::vector<Tensor>& p) const {
    const auto& ds = descriptors[s];
    const std::string prefix =
        "L" + std::to_string(layer) + "." + ds.name + ".";
    const std::int64_t axis = static_cast<std::int64_t>(s) + 1;
    if (static_cast<std::int64_t>(s) == attention_level) {
      AttentionParams ap;
      ap.wq = p[index_of(prefix + "wq")];
      ap.wk = p[index_of(prefix + "wk")];
      ap.wv = p[index_of(prefix + "wv")];
      ap.ffn_w1 = p[index_of(prefix + "ffn.w1")];
      ap.ffn_b1 = p[index_of(prefix + "ffn.b1")];
      ap.ffn_w2 = p[index_of(prefix + "ffn.w2")];
      ap.ffn_b2 = p[index_of(prefix + "ffn.b2")];
      if (ds.kind == SetKind::normal) {
        return attention_update(d, ap);
      }
      return nested_attention_update(d, ds.subset_count, ds.subset_size, ap,
                                     p[index_of(prefix + "wc")]);
    }
    const Tensor& bias = p[index_of(prefix + "b")];
    if (ds.kind == SetKind::normal) {
      return gcn_update(d, p[index_of(prefix + "v")], p[index_of(prefix + "u")],
                        ActivationKind::rectifier, axis, &bias);
    }
    return nested_gcn_update(d, axis, ds.subset_count, ds.subset_size,
                             p[index_of(prefix + "v")], p[index_of(prefix + "u_same")],
                             p[index_of(prefix + "u_cross")],
                             ActivationKind::rectifier, &bias);
  }

  // Joint sets update only the (block-)diagonal: positions whose block
  // indices along the two coupled axes agree take the new value, everything
  // else keeps the previous layer's value.
  Tensor splice_joint(const Tensor& updated, const Tensor& base) const {
    const auto& a = descriptors[(*joint_pair)[0]];
    const auto& b = descriptors[(*joint_pair)[1]];
    const std::int64_t axis_a = static_cast<std::int64_t>((*joint_pair)[0]) + 1;
    const std::int64_t axis_b = static_cast<std::int64_t>((*joint_pair)[1]) + 1;
    const std::int64_t block_a = a.kind == SetKind::nested ? a.subset_size : 1;
    const std::int64_t block_b = b.kind == SetKind::nested ? b.subset_size : 1;

    Tensor mask(updated.shape());
    double* pm = mask.mutable_data();
    std::vector<std::int64_t> strides(static_cast<std::size_t>(updated.rank()), 1);
    for (std::int64_t i = updated.rank() - 2; i >= 0; --i) {
      strides[static_cast<std::size_t>(i)] =
          strides[static_cast<std::size_t>(i + 1)] * updated.dim(i + 1);
    }
    for (std::int64_t off = 0; off < updated.size(); ++off) {
      const std::int64_t ia =
          (off / strides[static_cast<std::size_t>(axis_a)]) % updated.dim(axis_a);
      const std::int64_t ib =
          (off / strides[static_cast<std::size_t>(axis_b)]) % updated.dim(axis_b);
      pm[off] = (ia / block_a == ib / block_b) ? 1.0 : 0.0;
    }
    Tensor inv = sub(Tensor::scalar(1.0), mask);
    return add(mul(updated, mask), mul(base, inv));
  }
};

// ---------------------------------------------------------------------------
// Builder
// ---------------------------------------------------------------------------

namespace gnn_detail {

inline Tensor xavier_init(Shape shape, Rng& rng) {
  const std::int64_t fan_in = shape.size() == 2 ? shape[0] : shape[0];
  const std::int64_t fan_out = shape.size() == 2 ? shape[1] : shape[0];
  const double a = std::sqrt(6.0 / static_cast<double>(fan_in + fan_out));
  Tensor t(shape);
  double* p = t.mutable_data();
  for (std::int64_t i = 0; i < t.size(); ++i) p[i] = rng.uniform(-a, a);
  return t;
}

}  // namespace gnn_detail

// Derives the network from the set descriptors: one recursion per set, the
// qualifying interference set first with attention, templates by set kind,
// output function iff a joint group exists.  `seed` fixes the parameter
// initialization.  Two qualifying interference sets violate the single-
// interference-dimension contract and throw.
inline GnnModel build_gnn_from_problem(std::vector<SetDescriptor> descriptors,
                                       const GnnWidths& widths, std::int64_t layers,
                                       std::uint64_t seed,
                                       const GnnBuildOptions& options = {}) {
  if (descriptors.empty()) {
    throw std::invalid_argument("build_gnn_from_problem: no set descriptors");
  }
  if (layers <= 0 || widths.input <= 0 || widths.hidden <= 0 || widths.ffn_hidden <= 0) {
    throw std::invalid_argument("build_gnn_from_problem: sizes must be positive");
  }
  for (const auto& d : descriptors) {
    if (d.kind == SetKind::nested3) {
      throw std::invalid_argument(
          "build_gnn_from_problem: three-tier nested sets are described but not "
          "constructible in this build");
    }
    if (d.kind == SetKind::nested && (d.subset_count <= 0 || d.subset_size <= 0)) {
      throw std::invalid_argument("build_gnn_from_problem: nested set '" + d.name +
                                  "' needs positive subset sizes");
    }
  }

  std::vector<std::size_t> qualifying;
  for (std::size_t i = 0; i < descriptors.size(); ++i) {
    if (descriptors[i].qualifies_for_attention()) qualifying.push_back(i);
  }
  if (qualifying.size() > 1) {
    throw std::invalid_argument(
        "build_gnn_from_problem: two sets carry unmeasured interference; only a "
        "single interference dimension is supported");
  }

  // Move the attention-bearing set to the first recursion.
  std::optional<std::size_t> first;
  bool attention = false;
  switch (options.placement) {
    case AttentionPlacement::automatic:
      if (!qualifying.empty()) {
        first = qualifying[0];
        attention = true;
      }
      break;
    case AttentionPlacement::none:
      break;
    case AttentionPlacement::forced:
      if (options.forced_set >= descriptors.size()) {
        throw std::invalid_argument("build_gnn_from_problem: forced set out of range");
      }
      first = options.forced_set;
      attention = true;
      break;
  }
  if (first && *first != 0) {
    SetDescriptor moved = descriptors[*first];
    descriptors.erase(descriptors.begin() + static_cast<std::ptrdiff_t>(*first));
    descriptors.insert(descriptors.begin(), std::move(moved));
  }

  GnnModel model;
  model.widths = widths;
  model.layer_count = layers;
  model.attention_level = attention ? 0 : -1;
  model.descriptors = std::move(descriptors);

  // Joint groups: exactly two members, matching block structure.
  {
    std::vector<std::size_t> members;
    int group_id = 0;
    for (std::size_t i = 0; i < model.descriptors.size(); ++i) {
      const auto& d = model.descriptors[i];
      if (d.joint_group == 0) continue;
      if (members.empty()) {
        group_id = d.joint_group;
      } else if (d.joint_group != group_id) {
        throw std::invalid_argument("build_gnn_from_problem: one joint group only");
      }
      members.push_back(i);
    }
    if (members.size() == 1 || members.size() > 2) {
      throw std::invalid_argument(
          "build_gnn_from_problem: a joint group needs exactly two sets");
    }
    if (members.size() == 2) {
      const auto& a = model.descriptors[members[0]];
      const auto& b = model.descriptors[members[1]];
      if ((a.kind == SetKind::nested) != (b.kind == SetKind::nested)) {
        throw std::invalid_argument(
            "build_gnn_from_problem: joint sets must share their kind");
      }
      if (a.kind == SetKind::nested && a.subset_count != b.subset_count) {
        throw std::invalid_argument(
            "build_gnn_from_problem: joint nested sets need equal subset counts");
      }
      model.joint_pair = {{members[0], members[1]}};
    }
  }

  // Allocate parameters; everything is sized by widths alone.
  Rng rng(seed);
  const std::int64_t f = widths.hidden;
  const std::int64_t fh = widths.ffn_hidden;
  auto push = [&](const std::string& name, Shape shape, bool zero = false) {
    model.params.push_back(
        {name, zero ? Tensor::zeros(shape) : gnn_detail::xavier_init(shape, rng)});
  };
  push("embed.w", {widths.input, f});
  push("embed.b", {f}, true);
  for (std::int64_t layer = 0; layer < layers; ++layer) {
    for (std::size_t s = 0; s < model.descriptors.size(); ++s) {
      const auto& ds = model.descriptors[s];
      const std::string prefix = "L" + std::to_string(layer) + "." + ds.name + ".";
      if (static_cast<std::int64_t>(s) == model.attention_level) {
        push(prefix + "wq", {f, f});
        push(prefix + "wk", {f, f});
        push(prefix + "wv", {f, f});
        if (ds.kind == SetKind::nested) push(prefix + "wc", {f, f});
        push(prefix + "ffn.w1", {f, fh});
        push(prefix + "ffn.b1", {fh}, true);
        push(prefix + "ffn.w2", {fh, f});
        push(prefix + "ffn.b2", {f}, true);
      } else if (ds.kind == SetKind::normal) {
        push(prefix + "v", {f, f});
        push(prefix + "u", {f, f});
        push(prefix + "b", {f}, true);
      } else {
        push(prefix + "v", {f, f});
        push(prefix + "u_same", {f, f});
        push(prefix + "u_cross", {f, f});
        push(prefix + "b", {f}, true);
      }
    }
  }
  push("head.re", {f, 1});
  push("head.im", {f, 1});
  return model;
}

// ---------------------------------------------------------------------------
// Descriptor fixtures for the in-scope problems
// ---------------------------------------------------------------------------

// Multi-user beamforming: users interfere through inner products the channel
// matrix does not expose, antennas do not interfere.
inline std::vector<SetDescriptor> ps_descriptors() {
  SetDescriptor user;
  user.name = "user";
  user.interference_present = true;
  user.interference_in_parameters = false;
  SetDescriptor antenna;
  antenna.name = "bs-antenna";
  return {user, antenna};
}

// Scalar power control: the gain matrix hands the interference coefficients
// to the policy directly, and its two axes enumerate the same transceiver
// pairs, so they permute jointly.
inline std::vector<SetDescriptor> pc_descriptors() {
  SetDescriptor tx;
  tx.name = "transmitter";
  tx.joint_group = 1;
  tx.interference_present = true;
  tx.interference_in_parameters = true;
  SetDescriptor rx;
  rx.name = "receiver";
  rx.joint_group = 1;
  rx.interference_present = true;
  rx.interference_in_parameters = true;
  return {tx, rx};
}

// Multi-cell reflective-surface precoding: users and base-station antennas
// are nested per cell and permute jointly by cell; reflective elements form a
// normal set.  Cross-cell and in-cell interference is unmeasured, so the
// nested user set carries the attention recursion.
inline std::vector<SetDescriptor> ris_multicell_descriptors(std::int64_t cells,
                                                            std::int64_t users_per_cell,
                                                            std::int64_t antennas_per_cell,
                                                            std::int64_t elements) {
  (void)elements;  // normal sets are length-free; kept for call-site clarity
  SetDescriptor user;
  user.name = "user";
  user.kind = SetKind::nested;
  user.subset_count = cells;
  user.subset_size = users_per_cell;
  user.joint_group = 1;
  user.interference_present = true;
  user.interference_in_parameters = false;
  SetDescriptor antenna;
  antenna.name = "bs-antenna";
  antenna.kind = SetKind::nested;
  antenna.subset_count = cells;
  antenna.subset_size = antennas_per_cell;
  antenna.joint_group = 1;
  SetDescriptor element;
  element.name = "reflective-element";
  return {user, antenna, element};
}

// ---------------------------------------------------------------------------
// Equivariance scheme implied by the descriptors
// ---------------------------------------------------------------------------

// Scheme over {batch, set axes..., features} at the given set lengths.  Sets
// sharing a joint group share one permutation slot (the outer slot for
// nested pairs); everything else draws independently.
inline PermutationScheme model_scheme(const GnnModel& model,
                                      const std::vector<std::int64_t>& lengths) {
  if (lengths.size() != model.set_count()) {
    throw std::invalid_argument("model_scheme: one length per set required");
  }
  PermutationScheme scheme;
  scheme.axes.push_back(AxisPerm::fixed_axis());  // batch
  for (std::size_t s = 0; s < model.descriptors.size(); ++s) {
    const auto& d = model.descriptors[s];
    const int slot = d.joint_group != 0 ? 100 + d.joint_group : static_cast<int>(s);
    if (d.kind == SetKind::nested) {
      if (lengths[s] != d.subset_count * d.subset_size) {
        throw std::invalid_argument("model_scheme: nested length mismatch");
      }
      scheme.axes.push_back(AxisPerm::nested(slot, 200 + static_cast<int>(s),
                                             d.subset_count, d.subset_size));
    } else {
      scheme.axes.push_back(AxisPerm::arbitrary(slot, lengths[s]));
    }
  }
  scheme.axes.push_back(AxisPerm::fixed_axis());  // features
  return scheme;
}

}  // namespace pekit
