#pragma once

// Scalar weighted-MMSE power control on a K-user interference channel with a
// per-transmitter power limit.  Powers are p_k = v_k^2; the gain matrix is
// indexed receiver-first, so G(k, j) couples transmitter j into receiver k.
// One Jacobi sweep (all right-hand sides at the previous iterate):
//
//   v'_k = clip( z_k u_k G(k,k) / sum_j z_j u_j^2 G(j,k)^2 ,  [0, sqrt(P_max)] )
//   u'_k = v_k G(k,k) / ( sum_j v_j^2 G(k,j)^2 + sigma0^2 )
//   z'_k = 1 / (1 - u_k v_k G(k,k))
//
// All three sums run over every j including j = k.  Starting from
// v = sqrt(P_max)/2 with u computed from that v and z computed from (u, v)
// gives u_k v_k G(k,k) < 1, so every weight starts finite and above 1.
//
// The weight update has a pole at u v G = 1, and the single-user Jacobi sweep
// hits it exactly: with one user the unclipped amplitude update reduces to
// v' = 1/(u G) while u echoes its previous value, so the very next weight
// denominator 1 - u v G is exactly zero.  The pole is removable -- the weight
// cancels from the amplitude ratio z u G / (z u^2 G^2) -- so the residual
// MSE term is floored at kPcMseFloor before inverting.  At the floor the
// huge-but-finite weight still cancels exactly from the single-user amplitude
// update, reproducing the analytic limit; away from the pole (residual MSE
// above 1e-12) the floor never engages and the map is exactly the formula
// above.  A zero denominator in the v update (all weighted gains vanish)
// resolves to full power when the numerator is positive and to zero
// otherwise.

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <stdexcept>
#include <vector>

#include "pekit/channels.hpp"

namespace pekit {

// Floor on the residual MSE 1 - u v G before it is inverted into the weight
// z.  Keeps the exact single-user pole (see the header comment) finite while
// leaving every non-degenerate sweep untouched.
inline constexpr double kPcMseFloor = 1e-12;

struct WmmsePcConfig {
  std::int64_t max_iterations = 500;
  double tolerance = 1e-10;  // converged when the largest variable change is below this
  bool record_trace = false;
};

struct WmmsePcState {
  std::vector<double> amplitude;  // v_k >= 0
  std::vector<double> receive_gain;  // u_k
  std::vector<double> mse_weight;    // z_k
};

struct WmmsePcResult {
  WmmsePcState state;
  std::vector<double> se_trace;  // sum rate of p = v^2 after each iteration
  std::vector<WmmsePcState> state_trace;
  std::int64_t iterations = 0;
  bool converged = false;
};

inline std::vector<double> wmmse_pc_power(const WmmsePcState& s) {
  std::vector<double> p(s.amplitude.size());
  for (std::size_t k = 0; k < p.size(); ++k) p[k] = s.amplitude[k] * s.amplitude[k];
  return p;
}

inline WmmsePcState wmmse_pc_initial_state(const PcData& data) {
  const auto k_count = data.gain.rows();
  WmmsePcState s;
  s.amplitude.assign(static_cast<std::size_t>(k_count), std::sqrt(data.power_budget) / 2.0);
  s.receive_gain.resize(static_cast<std::size_t>(k_count));
  s.mse_weight.resize(static_cast<std::size_t>(k_count));
  for (Eigen::Index k = 0; k < k_count; ++k) {
    double denom = data.noise_power;
    for (Eigen::Index j = 0; j < k_count; ++j) {
      const double vg = s.amplitude[static_cast<std::size_t>(j)] * data.gain(k, j);
      denom += vg * vg;
    }
    s.receive_gain[static_cast<std::size_t>(k)] =
        s.amplitude[static_cast<std::size_t>(k)] * data.gain(k, k) / denom;
  }
  for (Eigen::Index k = 0; k < k_count; ++k) {
    const auto ks = static_cast<std::size_t>(k);
    const double mse = 1.0 - s.receive_gain[ks] * s.amplitude[ks] * data.gain(k, k);
    s.mse_weight[ks] = 1.0 / std::max(mse, kPcMseFloor);
  }
  return s;
}

// One Jacobi sweep; exposed separately for the re-expressed-form checks.
inline WmmsePcState wmmse_pc_step(const WmmsePcState& s, const PcData& data) {
  const auto k_count = data.gain.rows();
  const double v_max = std::sqrt(data.power_budget);
  WmmsePcState next = s;
  for (Eigen::Index k = 0; k < k_count; ++k) {
    const auto ks = static_cast<std::size_t>(k);

    double v_denom = 0.0;  // sum_j z_j u_j^2 G(j,k)^2
    for (Eigen::Index j = 0; j < k_count; ++j) {
      const auto js = static_cast<std::size_t>(j);
      const double ug = s.receive_gain[js] * data.gain(j, k);
      v_denom += s.mse_weight[js] * ug * ug;
    }
    const double v_numer = s.mse_weight[ks] * s.receive_gain[ks] * data.gain(k, k);
    double v = v_denom > 0.0 ? v_numer / v_denom : (v_numer > 0.0 ? v_max : 0.0);
    next.amplitude[ks] = std::clamp(v, 0.0, v_max);

    double u_denom = data.noise_power;  // sum_j (v_j G(k,j))^2 + sigma0^2
    for (Eigen::Index j = 0; j < k_count; ++j) {
      const double vg = s.amplitude[static_cast<std::size_t>(j)] * data.gain(k, j);
      u_denom += vg * vg;
    }
    next.receive_gain[ks] = s.amplitude[ks] * data.gain(k, k) / u_denom;

    const double mse = 1.0 - s.receive_gain[ks] * s.amplitude[ks] * data.gain(k, k);
    next.mse_weight[ks] = 1.0 / std::max(mse, kPcMseFloor);
  }
  return next;
}

inline WmmsePcResult wmmse_pc_solve(const PcData& data, const WmmsePcConfig& config = {}) {
  if (data.gain.rows() == 0) throw std::invalid_argument("wmmse_pc_solve: no users");
  WmmsePcResult result;
  WmmsePcState state = wmmse_pc_initial_state(data);
  for (std::int64_t iter = 0; iter < config.max_iterations; ++iter) {
    const WmmsePcState next = wmmse_pc_step(state, data);
    double delta = 0.0;
    for (std::size_t k = 0; k < next.amplitude.size(); ++k) {
      delta = std::max(delta, std::abs(next.amplitude[k] - state.amplitude[k]));
      delta = std::max(delta, std::abs(next.receive_gain[k] - state.receive_gain[k]));
      delta = std::max(delta, std::abs(next.mse_weight[k] - state.mse_weight[k]));
    }
    state = next;
    result.iterations = iter + 1;
    result.se_trace.push_back(se_pc(data, wmmse_pc_power(state)));
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
