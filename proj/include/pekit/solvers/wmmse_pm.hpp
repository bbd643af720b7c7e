#pragma once

// High-SNR-approximated MMSE updates for multi-stream MU-MIMO precoding.
// Each user k has a channel H_k (N_U x N_B) and M data streams; the state
// keeps a receive vector u_{m_k} in C^{N_U} and a transmit vector w_{m_k}
// in C^{N_B} per stream.  One Jacobi sweep (all right-hand sides at the
// previous iterate), with a_{p_j} = H_k w_{p_j} and b_{p_j} = H_j^H u_{p_j}:
//
//   u'_{m_k} = 2 a_{m_k} - sum_{(j,p) != (k,m)} (a_{p_j}^H a_{m_k}) a_{p_j}
//   w'_{m_k} = 2 b_{m_k} - sum_{(j,p) != (k,m)} (b_{p_j}^H b_{m_k}) b_{p_j}
//
// That w update is the kOwnChannel coupling (default): the own-user term
// (j = k) couples through H_k on both sides.  The kCrossChannel alternative
// instead re-evaluates the own-user sum once per interferer with that
// interferer's channel in the middle of the coefficient:
//
//   w'_{m_k} = 2 b_{m_k}
//            - sum_{j != k} [ sum_{p != m} (u_{p_k}^H H_j H_k^H u_{m_k}) b_{p_k}
//                           + sum_p       (u_{p_j}^H H_j H_k^H u_{m_k}) b_{p_j} ]
//
// The two couplings coincide when M = 1 (the own-user sum is empty) and in
// particular for M = K = 1, where the sweep is u <- 2 H w, w <- 2 H^H u.
// Which coupling produced a result is recorded alongside it everywhere
// results are serialized.
//
// There is no per-sweep power projection; precoders are scaled onto
// ||.||_F^2 <= P_max only when the SE is evaluated.

#include <Eigen/Dense>

#include <cmath>
#include <cstdint>
#include <stdexcept>
#include <string>
#include <vector>

#include "pekit/channels.hpp"

namespace pekit {

enum class PmCoupling { kOwnChannel, kCrossChannel };

inline const char* pm_coupling_name(PmCoupling c) {
  return c == PmCoupling::kOwnChannel ? "own-channel" : "cross-channel";
}

inline PmCoupling pm_coupling_from_name(const std::string& name) {
  if (name == "own-channel") return PmCoupling::kOwnChannel;
  if (name == "cross-channel") return PmCoupling::kCrossChannel;
  throw std::invalid_argument("unknown coupling '" + name +
                              "' (expected own-channel or cross-channel)");
}

struct WmmsePmConfig {
  PmCoupling coupling = PmCoupling::kOwnChannel;
  std::int64_t max_iterations = 50;
  double tolerance = 1e-10;  // converged when the largest entry change is below this
  bool record_trace = false;
};

struct WmmsePmState {
  // receive[k] is N_U x M (stream m in column m); transmit[k] is N_B x M.
  std::vector<CMat> receive;
  std::vector<CMat> transmit;
};

struct WmmsePmResult {
  WmmsePmState state;
  std::vector<double> se_trace;  // SE of the budget-scaled precoders per iteration
  std::vector<WmmsePmState> state_trace;
  PmCoupling coupling = PmCoupling::kOwnChannel;
  std::int64_t iterations = 0;
  bool converged = false;
};

inline WmmsePmState wmmse_pm_initial_state(const PmData& data) {
  const auto k_count = static_cast<Eigen::Index>(data.channel.size());
  const auto m = data.stream_count;
  WmmsePmState s;
  s.transmit.reserve(static_cast<std::size_t>(k_count));
  double total = 0.0;
  for (Eigen::Index k = 0; k < k_count; ++k) {
    // Channel-conjugate start: column m is the m-th receive antenna's channel.
    CMat w = data.channel[static_cast<std::size_t>(k)].adjoint().leftCols(m);
    total += w.squaredNorm();
    s.transmit.push_back(std::move(w));
  }
  const double scale = std::sqrt(data.power_budget / total);
  s.receive.reserve(static_cast<std::size_t>(k_count));
  for (Eigen::Index k = 0; k < k_count; ++k) {
    s.transmit[static_cast<std::size_t>(k)] *= scale;
    s.receive.push_back(data.channel[static_cast<std::size_t>(k)] *
                        s.transmit[static_cast<std::size_t>(k)]);
  }
  return s;
}

// One Jacobi sweep; exposed separately for the re-expressed-form checks.
inline WmmsePmState wmmse_pm_step(const WmmsePmState& s, const PmData& data,
                                  PmCoupling coupling) {
  const auto k_count = static_cast<Eigen::Index>(data.channel.size());
  const auto m_count = data.stream_count;
  WmmsePmState next;
  next.receive.resize(static_cast<std::size_t>(k_count));
  next.transmit.resize(static_cast<std::size_t>(k_count));

  // b[j] = H_j^H u_{. j}: each stream's transmit-side image under its own
  // receiver's channel (N_B x M per user).
  std::vector<CMat> b(static_cast<std::size_t>(k_count));
  for (Eigen::Index j = 0; j < k_count; ++j)
    b[static_cast<std::size_t>(j)] =
        data.channel[static_cast<std::size_t>(j)].adjoint() * s.receive[static_cast<std::size_t>(j)];

  for (Eigen::Index k = 0; k < k_count; ++k) {
    const CMat& h_k = data.channel[static_cast<std::size_t>(k)];

    // a[j] = H_k w_{. j}: every stream as seen by receiver k (N_U x M per user).
    std::vector<CMat> a(static_cast<std::size_t>(k_count));
    for (Eigen::Index j = 0; j < k_count; ++j)
      a[static_cast<std::size_t>(j)] = h_k * s.transmit[static_cast<std::size_t>(j)];

    CMat u_next(h_k.rows(), m_count);
    for (Eigen::Index m = 0; m < m_count; ++m) {
      const CVec a_own = a[static_cast<std::size_t>(k)].col(m);
      CVec acc = 2.0 * a_own;
      for (Eigen::Index j = 0; j < k_count; ++j)
        for (Eigen::Index p = 0; p < m_count; ++p) {
          if (j == k && p == m) continue;
          const CVec a_other = a[static_cast<std::size_t>(j)].col(p);
          acc -= a_other.dot(a_own) * a_other;  // (a_{p_j}^H a_{m_k}) a_{p_j}
        }
      u_next.col(m) = acc;
    }
    next.receive[static_cast<std::size_t>(k)] = u_next;

    CMat w_next(h_k.cols(), m_count);
    for (Eigen::Index m = 0; m < m_count; ++m) {
      const CVec b_own = b[static_cast<std::size_t>(k)].col(m);
      CVec acc = 2.0 * b_own;
      if (coupling == PmCoupling::kOwnChannel) {
        for (Eigen::Index j = 0; j < k_count; ++j)
          for (Eigen::Index p = 0; p < m_count; ++p) {
            if (j == k && p == m) continue;
            const CVec b_other = b[static_cast<std::size_t>(j)].col(p);
            acc -= b_other.dot(b_own) * b_other;  // (b_{p_j}^H b_{m_k}) b_{p_j}
          }
      } else {
        for (Eigen::Index j = 0; j < k_count; ++j) {
          if (j == k) continue;
          const CMat& h_j = data.channel[static_cast<std::size_t>(j)];
          // Own-user streams, coefficient routed through H_j.
          for (Eigen::Index p = 0; p < m_count; ++p) {
            if (p == m) continue;
            const CVec u_pk = s.receive[static_cast<std::size_t>(k)].col(p);
            const Cplx coef = (h_j.adjoint() * u_pk).dot(b_own);  // u_{p_k}^H H_j H_k^H u_{m_k}
            acc -= coef * b[static_cast<std::size_t>(k)].col(p);
          }
          // Interferer streams, as in the default coupling.
          for (Eigen::Index p = 0; p < m_count; ++p) {
            const CVec b_other = b[static_cast<std::size_t>(j)].col(p);
            acc -= b_other.dot(b_own) * b_other;
          }
        }
      }
      w_next.col(m) = acc;
    }
    next.transmit[static_cast<std::size_t>(k)] = w_next;
  }
  return next;
}

// Precoders scaled onto the power budget for SE evaluation.
inline std::vector<CMat> wmmse_pm_scaled_precoders(const PmData& data, const WmmsePmState& s) {
  double total = 0.0;
  for (const auto& w : s.transmit) total += w.squaredNorm();
  const double scale = total > data.power_budget ? std::sqrt(data.power_budget / total) : 1.0;
  std::vector<CMat> scaled;
  scaled.reserve(s.transmit.size());
  for (const auto& w : s.transmit) scaled.push_back(scale * w);
  return scaled;
}

inline WmmsePmResult wmmse_pm_solve(const PmData& data, const WmmsePmConfig& config = {}) {
  if (data.channel.empty()) throw std::invalid_argument("wmmse_pm_solve: no users");
  WmmsePmResult result;
  result.coupling = config.coupling;
  WmmsePmState state = wmmse_pm_initial_state(data);
  for (std::int64_t iter = 0; iter < config.max_iterations; ++iter) {
    const WmmsePmState next = wmmse_pm_step(state, data, config.coupling);
    double delta = 0.0;
    for (std::size_t k = 0; k < next.transmit.size(); ++k) {
      delta = std::max(delta,
                       (next.transmit[k] - state.transmit[k]).cwiseAbs().maxCoeff());
      delta = std::max(delta, (next.receive[k] - state.receive[k]).cwiseAbs().maxCoeff());
    }
    state = next;
    result.iterations = iter + 1;
    result.se_trace.push_back(se_pm(data, wmmse_pm_scaled_precoders(data, state)));
    if (config.record_trace) result.state_trace.push_back(state);
    if (delta < config.tolerance) {
      result.converged = true;
      break;
    }
  }
  result.state = state;
  return result;
}

}  // namespace pekit
