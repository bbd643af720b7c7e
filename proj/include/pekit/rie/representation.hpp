#pragma once

// Representation states: each solver's variables and instance constants packed
// into one real tensor whose axes are the permutable dimensions.  The
// re-expressed iterations (rie/steps.hpp) consume and produce these tensors,
// so a sweep becomes a map on a single array and its symmetry can be checked
// mechanically.
//
// Layouts (slot axis first; constants such as noise power and budget stay
// outside the tensor):
//
//   bandwidth/power   {5, K}                  [p, B, mu, lambda, g] per user.
//                                             lambda is shared; it is stored
//                                             per user and kept consistent.
//   beamforming       {7, N_B, K}             [w_re, w_im, u_re, u_im, z,
//                                             h_re, h_im]; the scalars u and z
//                                             are replicated along the antenna
//                                             axis so every slice carries the
//                                             full per-user state.
//   multi-antenna     {6, N_B, K*N_U, K*M}    [u_re, u_im, w_re, w_im,
//                                             h_re, h_im]; rows enumerate
//                                             receive antennas grouped by
//                                             user, columns enumerate streams
//                                             grouped by user.  Only diagonal
//                                             user blocks are populated: u is
//                                             replicated over transmit
//                                             antennas, w over receive
//                                             antennas, h over streams.  All
//                                             off-diagonal blocks are zero and
//                                             stay zero; a step refuses input
//                                             that violates this.
//   power control     {6, K, K}               column k is user k's element.
//                                             Diagonal (k, k): [v, u, z,
//                                             G(k,k), 0, 0].  Off-diagonal
//                                             row r: [0, 0, 0, 0, G(r,k),
//                                             G(k,r)] - the two cross gains
//                                             between the column's user and
//                                             the row's user.
//
// The zero pattern in the power-control layout is load-bearing: summed over
// all rows but one, slots 0..3 of a column reproduce that column's diagonal
// entries, which is how a row recovers its column's variables from an
// ordinary pool (steps.hpp).

#include <Eigen/Dense>

#include <cstdint>
#include <stdexcept>
#include <string>
#include <vector>

#include "pekit/channels.hpp"
#include "pekit/solvers/gd_pb.hpp"
#include "pekit/solvers/wmmse_pc.hpp"
#include "pekit/solvers/wmmse_pm.hpp"
#include "pekit/solvers/wmmse_ps.hpp"
#include "pekit/tensor.hpp"

namespace pekit {

// ---------------------------------------------------------------------------
// Slot indices
// ---------------------------------------------------------------------------

inline constexpr std::int64_t kPbSlotPower = 0;
inline constexpr std::int64_t kPbSlotBandwidth = 1;
inline constexpr std::int64_t kPbSlotRateMultiplier = 2;
inline constexpr std::int64_t kPbSlotPowerMultiplier = 3;
inline constexpr std::int64_t kPbSlotGain = 4;
inline constexpr std::int64_t kPbSlotCount = 5;

inline constexpr std::int64_t kPsSlotPrecoderRe = 0;
inline constexpr std::int64_t kPsSlotPrecoderIm = 1;
inline constexpr std::int64_t kPsSlotGainRe = 2;
inline constexpr std::int64_t kPsSlotGainIm = 3;
inline constexpr std::int64_t kPsSlotWeight = 4;
inline constexpr std::int64_t kPsSlotChannelRe = 5;
inline constexpr std::int64_t kPsSlotChannelIm = 6;
inline constexpr std::int64_t kPsSlotCount = 7;

inline constexpr std::int64_t kPmSlotReceiveRe = 0;
inline constexpr std::int64_t kPmSlotReceiveIm = 1;
inline constexpr std::int64_t kPmSlotTransmitRe = 2;
inline constexpr std::int64_t kPmSlotTransmitIm = 3;
inline constexpr std::int64_t kPmSlotChannelRe = 4;
inline constexpr std::int64_t kPmSlotChannelIm = 5;
inline constexpr std::int64_t kPmSlotCount = 6;

inline constexpr std::int64_t kPcSlotAmplitude = 0;
inline constexpr std::int64_t kPcSlotReceiveGain = 1;
inline constexpr std::int64_t kPcSlotWeight = 2;
inline constexpr std::int64_t kPcSlotDirectGain = 3;
inline constexpr std::int64_t kPcSlotRowGain = 4;  // G(row, column)
inline constexpr std::int64_t kPcSlotColGain = 5;  // G(column, row)
inline constexpr std::int64_t kPcSlotCount = 6;

// ---------------------------------------------------------------------------
// Bandwidth/power
// ---------------------------------------------------------------------------

inline Tensor pack_pb(const PbData& data, const GdPbState& state) {
  const auto k_count = static_cast<std::int64_t>(data.gain.size());
  if (static_cast<std::int64_t>(state.power.size()) != k_count ||
      static_cast<std::int64_t>(state.bandwidth.size()) != k_count ||
      static_cast<std::int64_t>(state.rate_multiplier.size()) != k_count) {
    throw std::invalid_argument("pack_pb: state/instance size mismatch");
  }
  Tensor d = Tensor::zeros({kPbSlotCount, k_count});
  for (std::int64_t k = 0; k < k_count; ++k) {
    const auto ks = static_cast<std::size_t>(k);
    d.at_mut({kPbSlotPower, k}) = state.power[ks];
    d.at_mut({kPbSlotBandwidth, k}) = state.bandwidth[ks];
    d.at_mut({kPbSlotRateMultiplier, k}) = state.rate_multiplier[ks];
    d.at_mut({kPbSlotPowerMultiplier, k}) = state.power_multiplier;
    d.at_mut({kPbSlotGain, k}) = data.gain[ks];
  }
  return d;
}

// The shared multiplier is read from user 0; the step keeps all copies equal.
inline GdPbState unpack_pb(const Tensor& d) {
  if (d.rank() != 2 || d.dim(0) != kPbSlotCount) {
    throw std::invalid_argument("unpack_pb: expected a {5, K} tensor");
  }
  const std::int64_t k_count = d.dim(1);
  GdPbState s;
  s.power.resize(static_cast<std::size_t>(k_count));
  s.bandwidth.resize(static_cast<std::size_t>(k_count));
  s.rate_multiplier.resize(static_cast<std::size_t>(k_count));
  for (std::int64_t k = 0; k < k_count; ++k) {
    const auto ks = static_cast<std::size_t>(k);
    s.power[ks] = d.at({kPbSlotPower, k});
    s.bandwidth[ks] = d.at({kPbSlotBandwidth, k});
    s.rate_multiplier[ks] = d.at({kPbSlotRateMultiplier, k});
  }
  s.power_multiplier = k_count > 0 ? d.at({kPbSlotPowerMultiplier, 0}) : 1.0;
  return s;
}

// ---------------------------------------------------------------------------
// Beamforming
// ---------------------------------------------------------------------------

inline Tensor pack_ps(const PsData& data, const WmmsePsState& state) {
  const auto n_b = data.channel.rows();
  const auto k_count = data.channel.cols();
  if (state.precoder.rows() != n_b || state.precoder.cols() != k_count ||
      state.receive_gain.size() != k_count || state.mse_weight.size() != k_count) {
    throw std::invalid_argument("pack_ps: state/instance size mismatch");
  }
  Tensor d = Tensor::zeros({kPsSlotCount, n_b, k_count});
  for (Eigen::Index k = 0; k < k_count; ++k) {
    for (Eigen::Index n = 0; n < n_b; ++n) {
      d.at_mut({kPsSlotPrecoderRe, n, k}) = state.precoder(n, k).real();
      d.at_mut({kPsSlotPrecoderIm, n, k}) = state.precoder(n, k).imag();
      d.at_mut({kPsSlotGainRe, n, k}) = state.receive_gain(k).real();
      d.at_mut({kPsSlotGainIm, n, k}) = state.receive_gain(k).imag();
      d.at_mut({kPsSlotWeight, n, k}) = state.mse_weight(k);
      d.at_mut({kPsSlotChannelRe, n, k}) = data.channel(n, k).real();
      d.at_mut({kPsSlotChannelIm, n, k}) = data.channel(n, k).imag();
    }
  }
  return d;
}

// Valid states replicate u and z along the antenna axis, so any
// antenna-invariant read recovers them; antenna 0 is used.
inline WmmsePsState unpack_ps(const Tensor& d) {
  if (d.rank() != 3 || d.dim(0) != kPsSlotCount) {
    throw std::invalid_argument("unpack_ps: expected a {7, N_B, K} tensor");
  }
  const std::int64_t n_b = d.dim(1);
  const std::int64_t k_count = d.dim(2);
  WmmsePsState s;
  s.precoder.resize(n_b, k_count);
  s.receive_gain.resize(k_count);
  s.mse_weight.resize(k_count);
  for (std::int64_t k = 0; k < k_count; ++k) {
    for (std::int64_t n = 0; n < n_b; ++n) {
      s.precoder(n, k) = Cplx(d.at({kPsSlotPrecoderRe, n, k}), d.at({kPsSlotPrecoderIm, n, k}));
    }
    s.receive_gain(k) = Cplx(d.at({kPsSlotGainRe, 0, k}), d.at({kPsSlotGainIm, 0, k}));
    s.mse_weight(k) = d.at({kPsSlotWeight, 0, k});
  }
  return s;
}

inline CMat ps_channel(const Tensor& d) {
  const std::int64_t n_b = d.dim(1);
  const std::int64_t k_count = d.dim(2);
  CMat h(n_b, k_count);
  for (std::int64_t k = 0; k < k_count; ++k) {
    for (std::int64_t n = 0; n < n_b; ++n) {
      h(n, k) = Cplx(d.at({kPsSlotChannelRe, n, k}), d.at({kPsSlotChannelIm, n, k}));
    }
  }
  return h;
}

// ---------------------------------------------------------------------------
// Multi-antenna
// ---------------------------------------------------------------------------

inline Tensor pack_pm(const PmData& data, const WmmsePmState& state) {
  const auto k_count = static_cast<std::int64_t>(data.channel.size());
  if (k_count == 0) throw std::invalid_argument("pack_pm: no users");
  const std::int64_t n_u = data.channel[0].rows();
  const std::int64_t n_b = data.channel[0].cols();
  const std::int64_t m = data.stream_count;
  if (static_cast<std::int64_t>(state.receive.size()) != k_count ||
      static_cast<std::int64_t>(state.transmit.size()) != k_count) {
    throw std::invalid_argument("pack_pm: state/instance size mismatch");
  }
  Tensor d = Tensor::zeros({kPmSlotCount, n_b, k_count * n_u, k_count * m});
  for (std::int64_t k = 0; k < k_count; ++k) {
    const auto ks = static_cast<std::size_t>(k);
    const CMat& h = data.channel[ks];
    const CMat& u = state.receive[ks];
    const CMat& w = state.transmit[ks];
    if (h.rows() != n_u || h.cols() != n_b || u.rows() != n_u || u.cols() != m ||
        w.rows() != n_b || w.cols() != m) {
      throw std::invalid_argument("pack_pm: inconsistent shapes at user " + std::to_string(k));
    }
    for (std::int64_t e = 0; e < n_u; ++e) {
      for (std::int64_t mm = 0; mm < m; ++mm) {
        const std::int64_t row = k * n_u + e;
        const std::int64_t col = k * m + mm;
        for (std::int64_t n = 0; n < n_b; ++n) {
          d.at_mut({kPmSlotReceiveRe, n, row, col}) = u(e, mm).real();
          d.at_mut({kPmSlotReceiveIm, n, row, col}) = u(e, mm).imag();
          d.at_mut({kPmSlotTransmitRe, n, row, col}) = w(n, mm).real();
          d.at_mut({kPmSlotTransmitIm, n, row, col}) = w(n, mm).imag();
          d.at_mut({kPmSlotChannelRe, n, row, col}) = h(e, n).real();
          d.at_mut({kPmSlotChannelIm, n, row, col}) = h(e, n).imag();
        }
      }
    }
  }
  return d;
}

// Reads each user's block at its origin; valid states are block-replicated.
inline WmmsePmState unpack_pm(const Tensor& d, std::int64_t k_count, std::int64_t n_u,
                              std::int64_t m) {
  if (d.rank() != 4 || d.dim(0) != kPmSlotCount || d.dim(2) != k_count * n_u ||
      d.dim(3) != k_count * m) {
    throw std::invalid_argument("unpack_pm: tensor does not match the stated geometry");
  }
  const std::int64_t n_b = d.dim(1);
  WmmsePmState s;
  s.receive.resize(static_cast<std::size_t>(k_count));
  s.transmit.resize(static_cast<std::size_t>(k_count));
  for (std::int64_t k = 0; k < k_count; ++k) {
    CMat u(n_u, m), w(n_b, m);
    for (std::int64_t mm = 0; mm < m; ++mm) {
      const std::int64_t col = k * m + mm;
      for (std::int64_t e = 0; e < n_u; ++e) {
        u(e, mm) = Cplx(d.at({kPmSlotReceiveRe, 0, k * n_u + e, col}),
                        d.at({kPmSlotReceiveIm, 0, k * n_u + e, col}));
      }
      for (std::int64_t n = 0; n < n_b; ++n) {
        w(n, mm) = Cplx(d.at({kPmSlotTransmitRe, n, k * n_u, col}),
                        d.at({kPmSlotTransmitIm, n, k * n_u, col}));
      }
    }
    s.receive[static_cast<std::size_t>(k)] = std::move(u);
    s.transmit[static_cast<std::size_t>(k)] = std::move(w);
  }
  return s;
}

// The layout populates only diagonal user blocks; everything else must be
// exactly zero, before and after every step.
inline void pm_check_block_support(const Tensor& d, std::int64_t n_u, std::int64_t m) {
  if (d.rank() != 4 || d.dim(0) != kPmSlotCount || n_u < 1 || m < 1 ||
      d.dim(2) % n_u != 0 || d.dim(3) % m != 0 || d.dim(2) / n_u != d.dim(3) / m) {
    throw std::invalid_argument("pm_check_block_support: bad geometry");
  }
  const std::int64_t n_b = d.dim(1);
  for (std::int64_t c = 0; c < kPmSlotCount; ++c) {
    for (std::int64_t n = 0; n < n_b; ++n) {
      for (std::int64_t row = 0; row < d.dim(2); ++row) {
        for (std::int64_t col = 0; col < d.dim(3); ++col) {
          if (row / n_u == col / m) continue;
          if (d.at({c, n, row, col}) != 0.0) {
            throw std::invalid_argument(
                "multi-antenna representation has a nonzero entry outside the diagonal user "
                "blocks (slot " +
                std::to_string(c) + ", row " + std::to_string(row) + ", column " +
                std::to_string(col) + ")");
          }
        }
      }
    }
  }
}

// ---------------------------------------------------------------------------
// Power control
// ---------------------------------------------------------------------------

inline Tensor pack_pc(const PcData& data, const WmmsePcState& state) {
  const std::int64_t k_count = data.gain.rows();
  if (data.gain.cols() != k_count ||
      static_cast<std::int64_t>(state.amplitude.size()) != k_count ||
      static_cast<std::int64_t>(state.receive_gain.size()) != k_count ||
      static_cast<std::int64_t>(state.mse_weight.size()) != k_count) {
    throw std::invalid_argument("pack_pc: state/instance size mismatch");
  }
  Tensor d = Tensor::zeros({kPcSlotCount, k_count, k_count});
  for (std::int64_t k = 0; k < k_count; ++k) {
    const auto ks = static_cast<std::size_t>(k);
    d.at_mut({kPcSlotAmplitude, k, k}) = state.amplitude[ks];
    d.at_mut({kPcSlotReceiveGain, k, k}) = state.receive_gain[ks];
    d.at_mut({kPcSlotWeight, k, k}) = state.mse_weight[ks];
    d.at_mut({kPcSlotDirectGain, k, k}) = data.gain(k, k);
    for (std::int64_t r = 0; r < k_count; ++r) {
      if (r == k) continue;
      d.at_mut({kPcSlotRowGain, r, k}) = data.gain(r, k);
      d.at_mut({kPcSlotColGain, r, k}) = data.gain(k, r);
    }
  }
  return d;
}

inline WmmsePcState unpack_pc(const Tensor& d) {
  if (d.rank() != 3 || d.dim(0) != kPcSlotCount || d.dim(1) != d.dim(2)) {
    throw std::invalid_argument("unpack_pc: expected a {6, K, K} tensor");
  }
  const std::int64_t k_count = d.dim(1);
  WmmsePcState s;
  s.amplitude.resize(static_cast<std::size_t>(k_count));
  s.receive_gain.resize(static_cast<std::size_t>(k_count));
  s.mse_weight.resize(static_cast<std::size_t>(k_count));
  for (std::int64_t k = 0; k < k_count; ++k) {
    const auto ks = static_cast<std::size_t>(k);
    s.amplitude[ks] = d.at({kPcSlotAmplitude, k, k});
    s.receive_gain[ks] = d.at({kPcSlotReceiveGain, k, k});
    s.mse_weight[ks] = d.at({kPcSlotWeight, k, k});
  }
  return s;
}

}  // namespace pekit
