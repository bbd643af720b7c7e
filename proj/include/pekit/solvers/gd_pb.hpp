#pragma once

// Projected primal-dual gradient iteration for joint power-and-bandwidth
// allocation:
//
//   minimize_{p, B >= 0}  sum_k B_k
//   subject to            B_k log2(1 + p_k g_k / (N0 B_k)) >= s0   for all k
//                         sum_k p_k <= P_max
//
// Every iteration takes one projected step on each primal variable and one
// projected ascent step on each multiplier, all evaluated at the previous
// iterate (a Jacobi sweep), so user k touches the other users only through
// the pooled transmit power sum_j p_j.
//
// Two update rules are available.  With s_k = B log2(1 + p g / (N0 B)),
// ds/dp = B g / (ln2 (N0 B + p g)), and
// ds/dB = log2(1 + p g / (N0 B)) - p g / (ln2 (N0 B + p g)):
//
//   kGradient (default), exact Lagrangian steps:
//     p_k    <- [p_k + eta (mu_k ds/dp - lambda)]+
//     B_k    <- [B_k - eta (1 - mu_k ds/dB)]+
//     mu_k   <- [mu_k + eta (s0 - s_k)]+
//     lambda <- [lambda + eta (sum_j p_j - P_max)]+
//
//   kAlternate, a sign-flipped convention kept behind this switch for
//   comparison (the coupling terms enter with opposite sign, the power step
//   drops the bandwidth factor, and the bandwidth step drops 1/ln2):
//     p_k    <- [p_k + eta (lambda - mu_k g / (ln2 (N0 B + p g)))]+
//     B_k    <- [B_k + eta (-1 - mu_k log2(1 + p g/(N0 B)) + mu_k p g/(N0 B + p g))]+
//     mu_k   <- [mu_k + eta (s_k - s0)]+
//   with the same lambda step.  Not guaranteed to converge.
//
// Bandwidth appears in denominators, so a floor of kPbBandwidthFloor is
// substituted whenever an iterate touches B = 0; this keeps every update
// total and lets iterates leave the boundary.
//
// An instance whose rate floor is unreachable (s0 >= P_max g_k / (N0 ln2)
// for some user is a sufficient condition) drives the multipliers upward
// without bound; crossing multiplier_ceiling raises InfeasibleError.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <stdexcept>
#include <string>
#include <vector>

#include "pekit/channels.hpp"

namespace pekit {

class InfeasibleError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

enum class GdPbRule { kGradient, kAlternate };

inline const char* gd_pb_rule_name(GdPbRule r) {
  return r == GdPbRule::kGradient ? "gradient" : "alternate";
}

inline constexpr double kPbBandwidthFloor = 1e-12;
inline constexpr double kLn2 = 0.69314718055994530942;

struct GdPbConfig {
  GdPbRule rule = GdPbRule::kGradient;
  double step_size = 1e-2;
  double step_decay = 1.0;  // eta at iteration l is step_size * step_decay^l
  std::int64_t max_iterations = 20000;
  double tolerance = 1e-9;  // converged when the largest variable change is below this
  double multiplier_ceiling = 1e6;
  bool record_trace = false;
};

struct GdPbState {
  std::vector<double> power;
  std::vector<double> bandwidth;
  std::vector<double> rate_multiplier;  // mu_k
  double power_multiplier = 1.0;        // lambda
};

struct GdPbResult {
  GdPbState state;
  std::vector<double> objective_trace;  // sum_k B_k after every iteration
  std::vector<GdPbState> state_trace;   // filled when record_trace
  std::int64_t iterations = 0;
  bool converged = false;
};

// Power p_k g_k / (N0 ln2) is the rate achievable with unbounded bandwidth;
// a floor above this limit for the full budget is provably unreachable.
inline double pb_rate_limit(double power, double gain, double noise_density) {
  return power * gain / (noise_density * kLn2);
}

inline GdPbState gd_pb_initial_state(const PbData& data) {
  const auto k_count = data.gain.size();
  GdPbState s;
  s.power.assign(k_count, data.power_budget / static_cast<double>(k_count));
  s.bandwidth.assign(k_count, 1.0);
  s.rate_multiplier.assign(k_count, 1.0);
  s.power_multiplier = 1.0;
  return s;
}

// One Jacobi sweep.  Exposed separately so the re-expressed form can be
// checked against the identical map.
inline GdPbState gd_pb_step(const GdPbState& s, const PbData& data, double eta, GdPbRule rule) {
  const auto k_count = static_cast<std::int64_t>(data.gain.size());
  double power_sum = 0.0;
  for (std::int64_t j = 0; j < k_count; ++j) power_sum += s.power[static_cast<std::size_t>(j)];

  GdPbState next = s;
  for (std::int64_t k = 0; k < k_count; ++k) {
    const auto ks = static_cast<std::size_t>(k);
    const double p = s.power[ks];
    const double b = s.bandwidth[ks];
    const double mu = s.rate_multiplier[ks];
    const double lambda = s.power_multiplier;
    const double g = data.gain[ks];
    const double n0 = data.noise_density;

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
      mu_next = mu + eta * (data.rate_floor - rate);
    } else {
      p_next = p + eta * (lambda - mu * g / (kLn2 * denom));
      b_next = b + eta * (-1.0 - mu * log_term + mu * p * g / denom);
      mu_next = mu + eta * (rate - data.rate_floor);
    }
    next.power[ks] = std::max(0.0, p_next);
    next.bandwidth[ks] = std::max(0.0, b_next);
    next.rate_multiplier[ks] = std::max(0.0, mu_next);
  }
  next.power_multiplier =
      std::max(0.0, s.power_multiplier + eta * (power_sum - data.power_budget));
  return next;
}

inline GdPbResult gd_pb_solve(const PbData& data, const GdPbConfig& config = {}) {
  if (data.gain.empty()) throw std::invalid_argument("gd_pb_solve: no users");
  if (!(config.step_size > 0.0)) throw std::invalid_argument("gd_pb_solve: step size must be positive");

  GdPbResult result;
  GdPbState state = gd_pb_initial_state(data);
  double eta = config.step_size;
  for (std::int64_t iter = 0; iter < config.max_iterations; ++iter) {
    const GdPbState next = gd_pb_step(state, data, eta, config.rule);

    double worst_multiplier = next.power_multiplier;
    for (double m : next.rate_multiplier) worst_multiplier = std::max(worst_multiplier, m);
    if (worst_multiplier > config.multiplier_ceiling)
      throw InfeasibleError(
          "rate floor unreachable within the power budget (multiplier exceeded " +
          std::to_string(config.multiplier_ceiling) + " at iteration " + std::to_string(iter) +
          ")");

    double delta = std::abs(next.power_multiplier - state.power_multiplier);
    for (std::size_t i = 0; i < next.power.size(); ++i) {
      delta = std::max(delta, std::abs(next.power[i] - state.power[i]));
      delta = std::max(delta, std::abs(next.bandwidth[i] - state.bandwidth[i]));
      delta = std::max(delta, std::abs(next.rate_multiplier[i] - state.rate_multiplier[i]));
    }

    state = next;
    result.iterations = iter + 1;
    result.objective_trace.push_back(objective_pb(state.bandwidth));
    if (config.record_trace) result.state_trace.push_back(state);
    eta *= config.step_decay;
    if (delta < config.tolerance) {
      result.converged = true;
      break;
    }
  }
  result.state = state;
  return result;
}

}  // namespace pekit
