#pragma once

// Weighted-MMSE iteration for sum-SE multi-user MISO precoding under a total
// power constraint:
//
//   maximize_W  sum_k log2(1 + |h_k^H w_k|^2 / (sum_{j != k} |h_k^H w_j|^2 + sigma0^2))
//   subject to  ||W||_F^2 <= P_max
//
// One iteration maps (W, u, z) -> (W', u', z') with every right-hand side
// read from the previous iterate (a Jacobi sweep):
//
//   S_k  = sum_j |h_k^H w_j|^2 + sigma0^2
//   u'_k = h_k^H w_k / S_k                        (MMSE receive scalar)
//   z'_k = S_k / (S_k - |h_k^H w_k|^2)            (MSE weight, >= 1)
//   w'_k = z_k u_k (Phi + mu I)^{-1} h_k
//     Phi = sum_j z_j |u_j|^2 h_j h_j^H
//
// with mu >= 0 the smallest dual value that brings sum_k ||w'_k||^2 within
// P_max. Writing Phi = Q diag(lam) Q^H and beta_n = [Q^H Psi Q]_nn with
// Psi = sum_j z_j^2 |u_j|^2 h_j h_j^H, the transmitted power is
// P(mu) = sum_n beta_n / (lam_n + mu)^2, monotone in mu, so mu comes from a
// bisection on that scalar function (constants below).
//
// The state starts from the matched-filter precoder scaled to the power
// budget, with u and z set to its MMSE statistics.  Under a Jacobi sweep
// from that state each classical block update is simply revisited once
// before the next one lands, so the SE trace is non-decreasing exactly as
// for the cyclic update order — and stalls (zero change) on alternate
// iterations, which the stopping rule accounts for.

#include <Eigen/Dense>
#include <Eigen/Eigenvalues>

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <stdexcept>
#include <vector>

#include "pekit/channels.hpp"

namespace pekit {

// Dual-bisection protocol: these values are deliberately repeated verbatim in
// the re-expressed per-user form so both sides run the same search.
inline constexpr double kPsEigenFloorRatio = 1e-12;  // eigenvalues below lam_max*this are zeroed
inline constexpr double kPsMassFloorRatio = 1e-14;   // beta below beta_max*this carries no power
inline constexpr double kPsDualTolerance = 1e-10;
inline constexpr int kPsDualMaxDoublings = 200;
inline constexpr int kPsDualMaxHalvings = 100;

struct WmmsePsConfig {
  std::int64_t max_iterations = 200;
  double tolerance = 1e-8;  // on the SE change, over two consecutive iterations
  bool record_trace = false;
};

struct WmmsePsState {
  CMat precoder;                // N_B x K
  CVec receive_gain;            // u, length K
  Eigen::VectorXd mse_weight;   // z, length K
};

struct WmmsePsResult {
  WmmsePsState state;
  std::vector<double> se_trace;  // SE of the initial precoder, then after each iteration
  std::vector<WmmsePsState> state_trace;
  std::int64_t iterations = 0;
  bool converged = false;
};

// MMSE receive scalars and MSE weights of a fixed precoder.
inline void wmmse_ps_mmse_stats(const PsData& data, const CMat& precoder, CVec& receive_gain,
                                Eigen::VectorXd& mse_weight) {
  const auto k_count = data.channel.cols();
  receive_gain.resize(k_count);
  mse_weight.resize(k_count);
  for (Eigen::Index k = 0; k < k_count; ++k) {
    double total = data.noise_power;
    Cplx own = 0.0;
    for (Eigen::Index j = 0; j < k_count; ++j) {
      const Cplx c = data.channel.col(k).dot(precoder.col(j));  // h_k^H w_j
      total += std::norm(c);
      if (j == k) own = c;
    }
    receive_gain(k) = own / total;
    mse_weight(k) = total / (total - std::norm(own));
  }
}

// W' from fixed (u, z): regularized inverse with the dual found by bisection.
inline CMat wmmse_ps_precoder_update(const PsData& data, const CVec& receive_gain,
                                     const Eigen::VectorXd& mse_weight) {
  const auto n_b = data.channel.rows();
  const auto k_count = data.channel.cols();
  CMat phi = CMat::Zero(n_b, n_b);
  CMat psi = CMat::Zero(n_b, n_b);
  for (Eigen::Index j = 0; j < k_count; ++j) {
    const double zu = mse_weight(j) * std::norm(receive_gain(j));
    const CMat outer = data.channel.col(j) * data.channel.col(j).adjoint();
    phi += zu * outer;
    psi += mse_weight(j) * zu * outer;
  }

  Eigen::SelfAdjointEigenSolver<CMat> eig(phi);
  if (eig.info() != Eigen::Success)
    throw std::runtime_error("wmmse_ps_precoder_update: eigendecomposition failed");
  const Eigen::VectorXd lam_raw = eig.eigenvalues();
  const CMat q = eig.eigenvectors();

  const double lam_max = lam_raw.maxCoeff();
  Eigen::VectorXd lam(n_b), beta(n_b);
  for (Eigen::Index n = 0; n < n_b; ++n) {
    lam(n) = (lam_raw(n) < lam_max * kPsEigenFloorRatio) ? 0.0 : lam_raw(n);
    beta(n) = std::max(0.0, std::real((q.col(n).adjoint() * psi * q.col(n))(0, 0)));
  }
  const double beta_max = beta.maxCoeff();

  const auto transmit_power = [&](double mu) {
    double total = 0.0;
    for (Eigen::Index n = 0; n < n_b; ++n) {
      const double denom = lam(n) + mu;
      if (denom <= 0.0) {
        if (beta(n) > beta_max * kPsMassFloorRatio)
          return std::numeric_limits<double>::infinity();
        continue;  // no mass along a null direction
      }
      total += beta(n) / (denom * denom);
    }
    return total;
  };

  double mu = 0.0;
  if (transmit_power(0.0) > data.power_budget) {
    double hi = 1.0;
    for (int d = 0; d < kPsDualMaxDoublings && transmit_power(hi) > data.power_budget; ++d)
      hi *= 2.0;
    double lo = 0.0;
    for (int h = 0; h < kPsDualMaxHalvings && hi - lo > kPsDualTolerance; ++h) {
      const double mid = 0.5 * (lo + hi);
      (transmit_power(mid) > data.power_budget ? lo : hi) = mid;
    }
    mu = hi;  // the feasible end of the bracket
  }

  CMat precoder(n_b, k_count);
  for (Eigen::Index k = 0; k < k_count; ++k) {
    CVec coords = q.adjoint() * data.channel.col(k);
    for (Eigen::Index n = 0; n < n_b; ++n) {
      const double denom = lam(n) + mu;
      coords(n) = denom > 0.0 ? coords(n) / denom : Cplx(0.0);
    }
    precoder.col(k) = mse_weight(k) * receive_gain(k) * (q * coords);
  }
  return precoder;
}

inline WmmsePsState wmmse_ps_initial_state(const PsData& data) {
  WmmsePsState s;
  s.precoder = data.channel * (std::sqrt(data.power_budget) / data.channel.norm());
  wmmse_ps_mmse_stats(data, s.precoder, s.receive_gain, s.mse_weight);
  return s;
}

// One Jacobi sweep; exposed separately for the re-expressed-form checks.
inline WmmsePsState wmmse_ps_step(const WmmsePsState& s, const PsData& data) {
  WmmsePsState next;
  wmmse_ps_mmse_stats(data, s.precoder, next.receive_gain, next.mse_weight);
  next.precoder = wmmse_ps_precoder_update(data, s.receive_gain, s.mse_weight);
  return next;
}

inline WmmsePsResult wmmse_ps_solve(const PsData& data, const WmmsePsConfig& config = {}) {
  if (data.channel.size() == 0) throw std::invalid_argument("wmmse_ps_solve: empty channel");
  WmmsePsResult result;
  if (data.channel.norm() == 0.0) {
    // Degenerate all-zero channel: every precoder yields SE 0; return zeros.
    result.state.precoder = CMat::Zero(data.channel.rows(), data.channel.cols());
    result.state.receive_gain = CVec::Zero(data.channel.cols());
    result.state.mse_weight = Eigen::VectorXd::Ones(data.channel.cols());
    result.se_trace.push_back(0.0);
    result.converged = true;
    return result;
  }

  WmmsePsState state = wmmse_ps_initial_state(data);
  result.se_trace.push_back(se_ps(data, state.precoder));
  for (std::int64_t iter = 0; iter < config.max_iterations; ++iter) {
    state = wmmse_ps_step(state, data);
    result.se_trace.push_back(se_ps(data, state.precoder));
    if (config.record_trace) result.state_trace.push_back(state);
    result.iterations = iter + 1;
    // The Jacobi sweep stalls on alternate iterations, so demand two
    // consecutive near-zero SE changes before declaring convergence.
    const auto n = result.se_trace.size();
    if (n >= 3 && std::abs(result.se_trace[n - 1] - result.se_trace[n - 2]) < config.tolerance &&
        std::abs(result.se_trace[n - 2] - result.se_trace[n - 3]) < config.tolerance) {
      result.converged = true;
      break;
    }
  }
  result.state = state;
  return result;
}

}  // namespace pekit
