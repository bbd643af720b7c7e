#pragma once

// The four iterative sweeps re-expressed as recursive compositions of
// one-set templates acting on representation states (rie/representation.hpp).
// Each step function builds the same numbers as the corresponding solver
// sweep, but through the template machinery: per-element part functions, a
// pool over the rest of the set, and a combiner.  The builders expose the
// composition as a RecursionStack so its structure (template kinds, pairwise
// parts, pooling conventions) can be reported and asserted.
//
//   bandwidth/power   one recursion over users; the only cross-user quantity
//                     is the power draw, so the part is ordinary (a fixed
//                     linear read of the neighbor), and the combiner replays
//                     the per-user update.
//   beamforming       recursion over users with a pairwise part: interference
//                     and the regularization matrices need transmitter j
//                     against receiver k, which is exactly a pairwise slot.
//                     The per-user combiner embeds the antenna-level
//                     recursion (linear algebra that treats antennas
//                     uniformly).
//   multi-antenna     recursion over streams grouped by user (nested
//                     template).  Both the within-user and the cross-user
//                     parts are pairwise.  The cross-channel coupling routes
//                     a within-user emission through a cross-user aggregate:
//                       sum_{j!=k} sum_{p!=m} (u_pk^H H_j H_k^H u_mk) b_pk
//                         = [sum_{p!=m} b_pk u_pk^H] [sum_{j!=k} H_j] H_k^H u_mk,
//                     so the within-user part emits b u^H and the cross-user
//                     part emits the channel, and the combiner splices them.
//   power control     two plain recursions, one over columns (transmitters)
//                     and one over rows (receivers), with ordinary parts
//                     only.  The column pool runs over all columns including
//                     the element's own, matching the solver's sums.  A row
//                     recovers its column's variables from the row pool: in
//                     slots 0..3 every row but the diagonal is zero, so the
//                     pooled sum over the other rows reproduces the diagonal
//                     entries exactly.
//
// Part functions receive content, not indices.  Where a computation needs to
// know which block of a slice is populated (multi-antenna) or which row is
// the diagonal (power control), it decides by content: the populated block is
// the one carrying the channel, and the diagonal row is the one with a
// nonzero MSE weight (the weight is 1/max(mse, floor) and never zero).  A
// slice with an all-zero channel has no identifiable owner; its emissions are
// all zero, so the ambiguity is harmless.

#include <Eigen/Dense>
#include <Eigen/Eigenvalues>

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <stdexcept>
#include <vector>

#include "pekit/pe_functions.hpp"
#include "pekit/rie/representation.hpp"

namespace pekit {

// Search protocol of the precoder update, repeated verbatim from the solver
// (see the note in solvers/wmmse_ps.hpp); a test pins the pairs together.
inline constexpr double kRiePsEigenFloorRatio = 1e-12;
inline constexpr double kRiePsMassFloorRatio = 1e-14;
inline constexpr double kRiePsDualTolerance = 1e-10;
inline constexpr int kRiePsDualMaxDoublings = 200;
inline constexpr int kRiePsDualMaxHalvings = 100;

namespace rie_detail {

inline void append_cvec(std::vector<double>& out, const CVec& v) {
  for (Eigen::Index i = 0; i < v.size(); ++i) out.push_back(v(i).real());
  for (Eigen::Index i = 0; i < v.size(); ++i) out.push_back(v(i).imag());
}

inline void append_cmat(std::vector<double>& out, const CMat& m) {
  for (Eigen::Index c = 0; c < m.cols(); ++c)
    for (Eigen::Index r = 0; r < m.rows(); ++r) out.push_back(m(r, c).real());
  for (Eigen::Index c = 0; c < m.cols(); ++c)
    for (Eigen::Index r = 0; r < m.rows(); ++r) out.push_back(m(r, c).imag());
}

inline CVec read_cvec(const Tensor& t, std::int64_t offset, std::int64_t n) {
  CVec v(n);
  const double* p = t.data();
  for (std::int64_t i = 0; i < n; ++i) v(i) = Cplx(p[offset + i], p[offset + n + i]);
  return v;
}

inline CMat read_cmat(const Tensor& t, std::int64_t offset, std::int64_t rows,
                      std::int64_t cols) {
  CMat m(rows, cols);
  const double* p = t.data();
  const std::int64_t plane = rows * cols;
  for (std::int64_t c = 0; c < cols; ++c)
    for (std::int64_t r = 0; r < rows; ++r) {
      const std::int64_t i = c * rows + r;
      m(r, c) = Cplx(p[offset + i], p[offset + plane + i]);
    }
  return m;
}

// True when a pooled tensor is the empty-pool sentinel rather than a real
// aggregate of the expected length.
inline bool empty_pool(const Tensor& pooled, std::int64_t expected) {
  return pooled.size() != expected;
}

}  // namespace rie_detail

// ---------------------------------------------------------------------------
// Bandwidth/power
// ---------------------------------------------------------------------------

inline RecursionStack pb_recursion_stack(double noise_density, double rate_floor,
                                         double power_budget, double eta, GdPbRule rule) {
  OneSetTemplate t;
  t.kind = TemplateKind::ape1;
  t.dim_name = "user";
  t.pool = PoolKind::sum;
  t.include_self = false;
  t.processors = {{ProcessorKind::ordinary, "neighbor-power", {}, {}},
                  {ProcessorKind::ordinary, "variable-update", {}, {}}};

  // The only cross-user dependency is the budget load: a fixed linear read of
  // the neighbor's power slot.
  t.q1_ordinary = [](const Tensor& other) {
    return Tensor::scalar(other.at({kPbSlotPower}));
  };

  t.combine = [noise_density, rate_floor, power_budget, eta, rule](
                  std::int64_t, const Tensor& self, const std::vector<Tensor>& pooled) {
    const double p = self.at({kPbSlotPower});
    const double b = self.at({kPbSlotBandwidth});
    const double mu = self.at({kPbSlotRateMultiplier});
    const double lambda = self.at({kPbSlotPowerMultiplier});
    const double g = self.at({kPbSlotGain});
    const double power_sum = pooled[0].at({0}) + p;

    const double n0 = noise_density;
    const double b_eff = std::max(b, kPbBandwidthFloor);
    const double denom = n0 * b_eff + p * g;
    const double log_term = std::log2(1.0 + p * g / (n0 * b_eff));
    const double rate = b_eff * log_term;

    double p_next = 0.0;
    double b_next = 0.0;
    double mu_next = 0.0;
    if (rule == GdPbRule::kGradient) {
      const double ds_dp = b_eff * g / (kLn2 * denom);
      const double ds_db = log_term - p * g / (kLn2 * denom);
      p_next = p + eta * (mu * ds_dp - lambda);
      b_next = b - eta * (1.0 - mu * ds_db);
      mu_next = mu + eta * (rate_floor - rate);
    } else {
      p_next = p + eta * (lambda - mu * g / (kLn2 * denom));
      b_next = b + eta * (-1.0 - mu * log_term + mu * p * g / denom);
      mu_next = mu + eta * (rate - rate_floor);
    }

    Tensor out = Tensor::zeros({kPbSlotCount});
    out.at_mut({kPbSlotPower}) = std::max(0.0, p_next);
    out.at_mut({kPbSlotBandwidth}) = std::max(0.0, b_next);
    out.at_mut({kPbSlotRateMultiplier}) = std::max(0.0, mu_next);
    out.at_mut({kPbSlotPowerMultiplier}) =
        std::max(0.0, lambda + eta * (power_sum - power_budget));
    out.at_mut({kPbSlotGain}) = g;
    return out;
  };

  RecursionStack stack;
  stack.levels.push_back({std::move(t), 1});
  return stack;
}

inline Tensor rie_pb_step(const Tensor& d, double noise_density, double rate_floor,
                          double power_budget, double eta, GdPbRule rule) {
  if (d.rank() != 2 || d.dim(0) != kPbSlotCount) {
    throw std::invalid_argument("rie_pb_step: expected a {5, K} tensor");
  }
  return recursive_compose(
      pb_recursion_stack(noise_density, rate_floor, power_budget, eta, rule), d);
}

// ---------------------------------------------------------------------------
// Beamforming
// ---------------------------------------------------------------------------

namespace rie_detail {

inline CVec ps_slice_channel(const Tensor& s) {
  const std::int64_t n_b = s.dim(1);
  CVec h(n_b);
  for (std::int64_t n = 0; n < n_b; ++n) {
    h(n) = Cplx(s.at({kPsSlotChannelRe, n}), s.at({kPsSlotChannelIm, n}));
  }
  return h;
}

inline CVec ps_slice_precoder(const Tensor& s) {
  const std::int64_t n_b = s.dim(1);
  CVec w(n_b);
  for (std::int64_t n = 0; n < n_b; ++n) {
    w(n) = Cplx(s.at({kPsSlotPrecoderRe, n}), s.at({kPsSlotPrecoderIm, n}));
  }
  return w;
}

}  // namespace rie_detail

inline RecursionStack ps_recursion_stack(double noise_power, double power_budget) {
  OneSetTemplate user;
  user.kind = TemplateKind::ape2;
  user.dim_name = "user";
  user.pool = PoolKind::sum;
  user.include_self = false;
  user.processors = {{ProcessorKind::attention, "interference-and-loading", {}, {}},
                     {ProcessorKind::ordinary, "user-update", {}, {}}};

  // Pairwise part: receiver k against transmitter j.  Emits the interference
  // power plus j's contributions to the two regularization matrices, so the
  // pool hands the combiner everything the per-user update needs from the
  // rest of the set.
  user.q1_pair = [](const Tensor& self, const Tensor& other) {
    const std::int64_t n_b = self.dim(1);
    const CVec h_k = rie_detail::ps_slice_channel(self);
    const CVec w_j = rie_detail::ps_slice_precoder(other);
    const CVec h_j = rie_detail::ps_slice_channel(other);
    const Cplx u_j = Cplx(other.at({kPsSlotGainRe, 0}), other.at({kPsSlotGainIm, 0}));
    const double z_j = other.at({kPsSlotWeight, 0});

    std::vector<double> out;
    out.reserve(static_cast<std::size_t>(1 + 4 * n_b * n_b));
    out.push_back(std::norm(h_k.dot(w_j)));

    const double zu = z_j * std::norm(u_j);
    const CMat outer = h_j * h_j.adjoint();
    rie_detail::append_cmat(out, CMat(zu * outer));
    rie_detail::append_cmat(out, CMat(z_j * zu * outer));
    const auto len = static_cast<std::int64_t>(out.size());
    return Tensor({len}, std::move(out));
  };

  user.combine = [noise_power, power_budget](std::int64_t, const Tensor& self,
                                             const std::vector<Tensor>& pooled) {
    const std::int64_t n_b = self.dim(1);
    const std::int64_t plane = n_b * n_b;
    const CVec h_k = rie_detail::ps_slice_channel(self);
    const CVec w_k = rie_detail::ps_slice_precoder(self);
    const Cplx u_k = Cplx(self.at({kPsSlotGainRe, 0}), self.at({kPsSlotGainIm, 0}));
    const double z_k = self.at({kPsSlotWeight, 0});

    const bool lone = rie_detail::empty_pool(pooled[0], 1 + 4 * plane);
    const double interference = lone ? 0.0 : pooled[0].at({0});
    CMat phi = lone ? CMat::Zero(n_b, n_b) : rie_detail::read_cmat(pooled[0], 1, n_b, n_b);
    CMat psi =
        lone ? CMat::Zero(n_b, n_b) : rie_detail::read_cmat(pooled[0], 1 + 2 * plane, n_b, n_b);

    // Receive scalar and weight from the current precoders.
    const Cplx own = h_k.dot(w_k);
    const double total = noise_power + interference + std::norm(own);
    const Cplx u_next = own / total;
    const double z_next = total / (total - std::norm(own));

    // Complete the regularization matrices with the element's own share.
    const double zu = z_k * std::norm(u_k);
    const CMat outer = h_k * h_k.adjoint();
    phi += zu * outer;
    psi += z_k * zu * outer;

    // Precoder from the previous (u, z): same spectral form and the same dual
    // search as the solver, evaluated for this user.
    Eigen::SelfAdjointEigenSolver<CMat> eig(phi);
    if (eig.info() != Eigen::Success)
      throw std::runtime_error("beamforming combiner: eigendecomposition failed");
    const Eigen::VectorXd lam_raw = eig.eigenvalues();
    const CMat q = eig.eigenvectors();

    const double lam_max = lam_raw.maxCoeff();
    Eigen::VectorXd lam(n_b), beta(n_b);
    for (Eigen::Index n = 0; n < n_b; ++n) {
      lam(n) = (lam_raw(n) < lam_max * kRiePsEigenFloorRatio) ? 0.0 : lam_raw(n);
      beta(n) = std::max(0.0, std::real((q.col(n).adjoint() * psi * q.col(n))(0, 0)));
    }
    const double beta_max = beta.maxCoeff();

    const auto transmit_power = [&](double mu) {
      double sum = 0.0;
      for (Eigen::Index n = 0; n < n_b; ++n) {
        const double denom = lam(n) + mu;
        if (denom <= 0.0) {
          if (beta(n) > beta_max * kRiePsMassFloorRatio)
            return std::numeric_limits<double>::infinity();
          continue;
        }
        sum += beta(n) / (denom * denom);
      }
      return sum;
    };

    double mu = 0.0;
    if (transmit_power(0.0) > power_budget) {
      double hi = 1.0;
      for (int dd = 0; dd < kRiePsDualMaxDoublings && transmit_power(hi) > power_budget; ++dd)
        hi *= 2.0;
      double lo = 0.0;
      for (int hh = 0; hh < kRiePsDualMaxHalvings && hi - lo > kRiePsDualTolerance; ++hh) {
        const double mid = 0.5 * (lo + hi);
        (transmit_power(mid) > power_budget ? lo : hi) = mid;
      }
      mu = hi;
    }

    CVec coords = q.adjoint() * h_k;
    for (Eigen::Index n = 0; n < n_b; ++n) {
      const double denom = lam(n) + mu;
      coords(n) = denom > 0.0 ? coords(n) / denom : Cplx(0.0);
    }
    const CVec w_next = z_k * u_k * (q * coords);

    Tensor out = Tensor::zeros({kPsSlotCount, n_b});
    for (std::int64_t n = 0; n < n_b; ++n) {
      out.at_mut({kPsSlotPrecoderRe, n}) = w_next(n).real();
      out.at_mut({kPsSlotPrecoderIm, n}) = w_next(n).imag();
      out.at_mut({kPsSlotGainRe, n}) = u_next.real();
      out.at_mut({kPsSlotGainIm, n}) = u_next.imag();
      out.at_mut({kPsSlotWeight, n}) = z_next;
      out.at_mut({kPsSlotChannelRe, n}) = self.at({kPsSlotChannelRe, n});
      out.at_mut({kPsSlotChannelIm, n}) = self.at({kPsSlotChannelIm, n});
    }
    return out;
  };

  // Antenna-level recursion, carried structurally: inside the combiner the
  // antenna axis is only touched by spectral operations that treat antennas
  // uniformly (outer products, eigenbasis transforms), which is the ordinary
  // one-set form along that dimension.
  OneSetTemplate antenna;
  antenna.kind = TemplateKind::ape1;
  antenna.dim_name = "transmit-antenna";
  antenna.pool = PoolKind::sum;
  antenna.include_self = false;
  antenna.processors = {{ProcessorKind::ordinary, "antenna-mix", {}, {}}};

  RecursionStack stack;
  stack.levels.push_back({std::move(user), 2});
  stack.levels.push_back({std::move(antenna), 1});
  return stack;
}

inline Tensor rie_ps_step(const Tensor& d, double noise_power, double power_budget) {
  if (d.rank() != 3 || d.dim(0) != kPsSlotCount) {
    throw std::invalid_argument("rie_ps_step: expected a {7, N_B, K} tensor");
  }
  return recursive_compose(ps_recursion_stack(noise_power, power_budget), d);
}

// ---------------------------------------------------------------------------
// Multi-antenna
// ---------------------------------------------------------------------------

namespace rie_detail {

// The populated user block of a stream slice, identified by where the channel
// lives.  Content-based on purpose: parts see values, not positions.
inline std::int64_t pm_locate_block(const Tensor& s, std::int64_t n_u) {
  const std::int64_t n_b = s.dim(1);
  const std::int64_t blocks = s.dim(2) / n_u;
  std::int64_t best = 0;
  double best_norm = -1.0;
  for (std::int64_t blk = 0; blk < blocks; ++blk) {
    double nrm = 0.0;
    for (std::int64_t n = 0; n < n_b; ++n) {
      for (std::int64_t e = 0; e < n_u; ++e) {
        const double re = s.at({kPmSlotChannelRe, n, blk * n_u + e});
        const double im = s.at({kPmSlotChannelIm, n, blk * n_u + e});
        nrm += re * re + im * im;
      }
    }
    if (nrm > best_norm) {
      best_norm = nrm;
      best = blk;
    }
  }
  return best;
}

inline CMat pm_slice_channel(const Tensor& s, std::int64_t n_u, std::int64_t blk) {
  const std::int64_t n_b = s.dim(1);
  CMat h(n_u, n_b);
  for (std::int64_t e = 0; e < n_u; ++e)
    for (std::int64_t n = 0; n < n_b; ++n) {
      h(e, n) = Cplx(s.at({kPmSlotChannelRe, n, blk * n_u + e}),
                     s.at({kPmSlotChannelIm, n, blk * n_u + e}));
    }
  return h;
}

inline CVec pm_slice_receive(const Tensor& s, std::int64_t n_u, std::int64_t blk) {
  CVec u(n_u);
  for (std::int64_t e = 0; e < n_u; ++e) {
    u(e) = Cplx(s.at({kPmSlotReceiveRe, 0, blk * n_u + e}),
                s.at({kPmSlotReceiveIm, 0, blk * n_u + e}));
  }
  return u;
}

inline CVec pm_slice_transmit(const Tensor& s, std::int64_t n_u, std::int64_t blk) {
  const std::int64_t n_b = s.dim(1);
  CVec w(n_b);
  for (std::int64_t n = 0; n < n_b; ++n) {
    w(n) = Cplx(s.at({kPmSlotTransmitRe, n, blk * n_u}), s.at({kPmSlotTransmitIm, n, blk * n_u}));
  }
  return w;
}

}  // namespace rie_detail

inline RecursionStack pm_recursion_stack(PmCoupling coupling, std::int64_t k_count,
                                         std::int64_t n_u, std::int64_t stream_count) {
  const bool cross = coupling == PmCoupling::kCrossChannel;

  OneSetTemplate stream;
  stream.kind = TemplateKind::npe2;
  stream.dim_name = "stream";
  stream.pool = PoolKind::sum;
  stream.include_self = false;
  stream.subset_count = k_count;
  stream.subset_size = stream_count;
  stream.processors = {{ProcessorKind::attention, "same-user-stream", {}, {}},
                       {ProcessorKind::attention, "cross-user-stream", {}, {}},
                       {ProcessorKind::ordinary, "stream-update", {}, {}}};

  // Within-user pairwise part: the other streams of the element's own user.
  stream.q1_pair = [n_u, cross](const Tensor& self, const Tensor& other) {
    const std::int64_t blk_self = rie_detail::pm_locate_block(self, n_u);
    const std::int64_t blk_other = rie_detail::pm_locate_block(other, n_u);
    const CMat h_k = rie_detail::pm_slice_channel(self, n_u, blk_self);
    const CVec w_own = rie_detail::pm_slice_transmit(self, n_u, blk_self);
    const CVec u_own = rie_detail::pm_slice_receive(self, n_u, blk_self);
    const CVec w_other = rie_detail::pm_slice_transmit(other, n_u, blk_other);
    const CVec u_other = rie_detail::pm_slice_receive(other, n_u, blk_other);

    const CVec a_own = h_k * w_own;
    const CVec a_other = h_k * w_other;
    std::vector<double> out;
    rie_detail::append_cvec(out, CVec(a_other.dot(a_own) * a_other));
    if (!cross) {
      const CVec b_own = h_k.adjoint() * u_own;
      const CVec b_other = h_k.adjoint() * u_other;
      rie_detail::append_cvec(out, CVec(b_other.dot(b_own) * b_other));
    } else {
      // Emitted as a matrix so the combiner can route it through the pooled
      // cross-user channel: b u^H applied to (sum_j H_j) H_k^H u.
      const CVec b_other = h_k.adjoint() * u_other;
      rie_detail::append_cmat(out, CMat(b_other * u_other.adjoint()));
    }
    const auto len = static_cast<std::int64_t>(out.size());
    return Tensor({len}, std::move(out));
  };

  // Cross-user pairwise part: streams of other users.
  stream.q3_pair = [n_u, cross, stream_count](const Tensor& self, const Tensor& other) {
    const std::int64_t blk_self = rie_detail::pm_locate_block(self, n_u);
    const std::int64_t blk_other = rie_detail::pm_locate_block(other, n_u);
    const CMat h_k = rie_detail::pm_slice_channel(self, n_u, blk_self);
    const CMat h_j = rie_detail::pm_slice_channel(other, n_u, blk_other);
    const CVec w_own = rie_detail::pm_slice_transmit(self, n_u, blk_self);
    const CVec u_own = rie_detail::pm_slice_receive(self, n_u, blk_self);
    const CVec w_other = rie_detail::pm_slice_transmit(other, n_u, blk_other);
    const CVec u_other = rie_detail::pm_slice_receive(other, n_u, blk_other);

    const CVec a_own = h_k * w_own;
    const CVec a_other = h_k * w_other;
    const CVec b_own = h_k.adjoint() * u_own;
    const CVec b_other = h_j.adjoint() * u_other;

    std::vector<double> out;
    rie_detail::append_cvec(out, CVec(a_other.dot(a_own) * a_other));
    rie_detail::append_cvec(out, CVec(b_other.dot(b_own) * b_other));
    if (cross) {
      // Every stream of user j emits the same channel; dividing by the subset
      // size makes the per-user aggregate the channel itself.
      rie_detail::append_cmat(out, CMat(h_j / static_cast<double>(stream_count)));
    }
    const auto len = static_cast<std::int64_t>(out.size());
    return Tensor({len}, std::move(out));
  };

  stream.combine = [n_u, cross](std::int64_t, const Tensor& self,
                                const std::vector<Tensor>& pooled) {
    const std::int64_t n_b = self.dim(1);
    const std::int64_t blk = rie_detail::pm_locate_block(self, n_u);
    const CMat h_k = rie_detail::pm_slice_channel(self, n_u, blk);
    const CVec w_own = rie_detail::pm_slice_transmit(self, n_u, blk);
    const CVec u_own = rie_detail::pm_slice_receive(self, n_u, blk);
    const CVec a_own = h_k * w_own;
    const CVec b_own = h_k.adjoint() * u_own;

    const std::int64_t len1 =
        cross ? 2 * n_u + 2 * n_b * n_u : 2 * n_u + 2 * n_b;
    const std::int64_t len3 =
        cross ? 2 * n_u + 2 * n_b + 2 * n_u * n_b : 2 * n_u + 2 * n_b;
    const bool lone1 = rie_detail::empty_pool(pooled[0], len1);
    const bool lone3 = rie_detail::empty_pool(pooled[1], len3);

    CVec u_next = 2.0 * a_own;
    if (!lone1) u_next -= rie_detail::read_cvec(pooled[0], 0, n_u);
    if (!lone3) u_next -= rie_detail::read_cvec(pooled[1], 0, n_u);

    CVec w_next = 2.0 * b_own;
    if (!cross) {
      if (!lone1) w_next -= rie_detail::read_cvec(pooled[0], 2 * n_u, n_b);
      if (!lone3) w_next -= rie_detail::read_cvec(pooled[1], 2 * n_u, n_b);
    } else {
      if (!lone3) {
        w_next -= rie_detail::read_cvec(pooled[1], 2 * n_u, n_b);
        if (!lone1) {
          const CMat bu = rie_detail::read_cmat(pooled[0], 2 * n_u, n_b, n_u);
          const CMat h_sum = rie_detail::read_cmat(pooled[1], 2 * n_u + 2 * n_b, n_u, n_b);
          w_next -= bu * (h_sum * b_own);
        }
      }
    }

    Tensor out = Tensor::zeros(self.shape());
    for (std::int64_t e = 0; e < n_u; ++e) {
      const std::int64_t row = blk * n_u + e;
      for (std::int64_t n = 0; n < n_b; ++n) {
        out.at_mut({kPmSlotReceiveRe, n, row}) = u_next(e).real();
        out.at_mut({kPmSlotReceiveIm, n, row}) = u_next(e).imag();
        out.at_mut({kPmSlotTransmitRe, n, row}) = w_next(n).real();
        out.at_mut({kPmSlotTransmitIm, n, row}) = w_next(n).imag();
        out.at_mut({kPmSlotChannelRe, n, row}) = self.at({kPmSlotChannelRe, n, row});
        out.at_mut({kPmSlotChannelIm, n, row}) = self.at({kPmSlotChannelIm, n, row});
      }
    }
    return out;
  };

  // Antenna-level recursions, carried structurally: within the parts the
  // receive-antenna axis (grouped by user) and the transmit-antenna axis only
  // enter through inner products and matrix products, uniform along those
  // dimensions.
  OneSetTemplate receive_antenna;
  receive_antenna.kind = TemplateKind::npe1;
  receive_antenna.dim_name = "receive-antenna";
  receive_antenna.pool = PoolKind::sum;
  receive_antenna.include_self = false;
  receive_antenna.subset_count = k_count;
  receive_antenna.subset_size = n_u;
  receive_antenna.processors = {{ProcessorKind::ordinary, "receive-mix", {}, {}}};

  OneSetTemplate transmit_antenna;
  transmit_antenna.kind = TemplateKind::ape1;
  transmit_antenna.dim_name = "transmit-antenna";
  transmit_antenna.pool = PoolKind::sum;
  transmit_antenna.include_self = false;
  transmit_antenna.processors = {{ProcessorKind::ordinary, "transmit-mix", {}, {}}};

  RecursionStack stack;
  stack.levels.push_back({std::move(stream), 3});
  stack.levels.push_back({std::move(receive_antenna), 2});
  stack.levels.push_back({std::move(transmit_antenna), 1});
  stack.output = OutputFunctionSpec{2, 3, n_u, stream_count};
  return stack;
}

inline Tensor rie_pm_step(const Tensor& d, PmCoupling coupling, std::int64_t n_u,
                          std::int64_t stream_count) {
  if (d.rank() != 4 || d.dim(0) != kPmSlotCount || n_u < 1 || stream_count < 1 ||
      d.dim(2) % n_u != 0 || d.dim(3) % stream_count != 0 ||
      d.dim(2) / n_u != d.dim(3) / stream_count) {
    throw std::invalid_argument("rie_pm_step: tensor does not match the stated geometry");
  }
  pm_check_block_support(d, n_u, stream_count);
  const std::int64_t k_count = d.dim(2) / n_u;
  Tensor out =
      recursive_compose(pm_recursion_stack(coupling, k_count, n_u, stream_count), d);
  pm_check_block_support(out, n_u, stream_count);
  return out;
}

// ---------------------------------------------------------------------------
// Power control
// ---------------------------------------------------------------------------

namespace rie_detail {

// Row-level recursion inside the column part: every row emits the two
// coupling loads its receiver/transmitter pairing contributes to the other
// columns.  Off-diagonal rows reconstruct their column's variables from the
// pool over the other rows (exact, because those slots are zero everywhere
// but the diagonal).
inline OneSetTemplate pc_row_profile_template() {
  OneSetTemplate t;
  t.kind = TemplateKind::ape1;
  t.dim_name = "receiver";
  t.pool = PoolKind::sum;
  t.include_self = false;
  t.processors = {{ProcessorKind::ordinary, "coupling-profile", {}, {}}};
  t.q1_ordinary = [](const Tensor& other) { return Tensor(other.shape(), other.values()); };
  t.combine = [](std::int64_t, const Tensor& row, const std::vector<Tensor>& pooled) {
    const bool lone = empty_pool(pooled[0], kPcSlotCount);
    Tensor out = Tensor::zeros({2});
    if (row.at({kPcSlotWeight}) != 0.0) {
      // Diagonal row: own variables against the direct gain.
      const double ug = row.at({kPcSlotReceiveGain}) * row.at({kPcSlotDirectGain});
      out.at_mut({0}) = row.at({kPcSlotWeight}) * ug * ug;
      const double vg = row.at({kPcSlotAmplitude}) * row.at({kPcSlotDirectGain});
      out.at_mut({1}) = vg * vg;
    } else if (!lone) {
      // Cross row: the column's variables, recovered from the pool, against
      // the two cross gains carried by this row.
      const double ug = pooled[0].at({kPcSlotReceiveGain}) * row.at({kPcSlotColGain});
      out.at_mut({0}) = pooled[0].at({kPcSlotWeight}) * ug * ug;
      const double vg = pooled[0].at({kPcSlotAmplitude}) * row.at({kPcSlotRowGain});
      out.at_mut({1}) = vg * vg;
    }
    return out;
  };
  return t;
}

// Row-level recursion inside the column combiner: the diagonal row refreshes
// the variables from the pooled loads; cross rows pass their gains through.
inline OneSetTemplate pc_row_update_template(double noise_power, double power_budget) {
  OneSetTemplate t;
  t.kind = TemplateKind::ape1;
  t.dim_name = "receiver";
  t.pool = PoolKind::sum;
  t.include_self = false;
  t.processors = {{ProcessorKind::ordinary, "row-update", {}, {}}};
  t.q1_ordinary = [](const Tensor& other) { return Tensor(other.shape(), other.values()); };
  t.combine = [noise_power, power_budget](std::int64_t, const Tensor& row,
                                          const std::vector<Tensor>&) {
    Tensor out = Tensor::zeros({kPcSlotCount});
    if (row.at({kPcSlotWeight}) == 0.0) {
      for (std::int64_t c = 0; c < kPcSlotCount; ++c) out.at_mut({c}) = row.at({c});
      return out;
    }
    const double v = row.at({kPcSlotAmplitude});
    const double u = row.at({kPcSlotReceiveGain});
    const double z = row.at({kPcSlotWeight});
    const double gain = row.at({kPcSlotDirectGain});
    const double v_denom = row.at({kPcSlotCount + 0});
    const double u_denom = noise_power + row.at({kPcSlotCount + 1});
    const double v_max = std::sqrt(power_budget);

    const double v_numer = z * u * gain;
    const double v_unclipped =
        v_denom > 0.0 ? v_numer / v_denom : (v_numer > 0.0 ? v_max : 0.0);
    out.at_mut({kPcSlotAmplitude}) = std::clamp(v_unclipped, 0.0, v_max);
    out.at_mut({kPcSlotReceiveGain}) = v * gain / u_denom;
    const double mse = 1.0 - u * v * gain;
    out.at_mut({kPcSlotWeight}) = 1.0 / std::max(mse, kPcMseFloor);
    out.at_mut({kPcSlotDirectGain}) = gain;
    return out;
  };
  return t;
}

}  // namespace rie_detail

inline RecursionStack pc_recursion_stack(double noise_power, double power_budget) {
  const OneSetTemplate profile = rie_detail::pc_row_profile_template();
  const OneSetTemplate update =
      rie_detail::pc_row_update_template(noise_power, power_budget);

  OneSetTemplate column;
  column.kind = TemplateKind::ape1;
  column.dim_name = "transmitter";
  column.pool = PoolKind::sum;
  // The coupling sums run over every transmitter, the element's own included.
  column.include_self = true;
  column.processors = {{ProcessorKind::ordinary, "column-profile", {}, {}},
                       {ProcessorKind::ordinary, "column-update", {}, {}}};

  column.q1_ordinary = [profile](const Tensor& other) {
    return one_set_apply(profile, other, 1);
  };

  column.combine = [update](std::int64_t, const Tensor& self,
                            const std::vector<Tensor>& pooled) {
    const std::int64_t k_count = self.dim(1);
    // Augment the column with the pooled loads, then run the row recursion.
    Tensor aug = Tensor::zeros({kPcSlotCount + 2, k_count});
    for (std::int64_t c = 0; c < kPcSlotCount; ++c)
      for (std::int64_t r = 0; r < k_count; ++r) aug.at_mut({c, r}) = self.at({c, r});
    for (std::int64_t r = 0; r < k_count; ++r) {
      aug.at_mut({kPcSlotCount + 0, r}) = pooled[0].at({0, r});
      aug.at_mut({kPcSlotCount + 1, r}) = pooled[0].at({1, r});
    }
    return one_set_apply(update, aug, 1);
  };

  OneSetTemplate receiver = rie_detail::pc_row_profile_template();

  RecursionStack stack;
  stack.levels.push_back({std::move(column), 2});
  stack.levels.push_back({std::move(receiver), 1});
  stack.output = OutputFunctionSpec{1, 2, 1, 1};
  return stack;
}

inline Tensor rie_pc_step(const Tensor& d, double noise_power, double power_budget) {
  if (d.rank() != 3 || d.dim(0) != kPcSlotCount || d.dim(1) != d.dim(2)) {
    throw std::invalid_argument("rie_pc_step: expected a {6, K, K} tensor");
  }
  return recursive_compose(pc_recursion_stack(noise_power, power_budget), d);
}

}  // namespace pekit
