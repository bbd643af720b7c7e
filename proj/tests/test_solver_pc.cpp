#include "pekit/solvers/wmmse_pc.hpp"

#include <gtest/gtest.h>

#include <cmath>
#include <vector>

#include "pekit/channels.hpp"

namespace {

using pekit::ChannelModel;
using pekit::PcData;
using pekit::ProblemVariant;
using pekit::SizeSpec;

PcData pc_from_gain(std::initializer_list<double> entries, Eigen::Index k, double noise,
                    double budget) {
  Eigen::MatrixXd g(k, k);
  Eigen::Index i = 0;
  for (double v : entries) {
    g(i / k, i % k) = v;
    ++i;
  }
  return pekit::make_pc_instance(g, noise, budget).pc;
}

TEST(WmmsePc, SingleUserRampsToFullPower) {
  const PcData data = pc_from_gain({2.0}, 1, 0.5, 1.0);
  pekit::WmmsePcConfig config;
  config.record_trace = true;
  const auto result = pekit::wmmse_pc_solve(data, config);
  ASSERT_TRUE(result.converged);
  const auto p = pekit::wmmse_pc_power(result.state);
  EXPECT_NEAR(p[0], data.power_budget, 1e-3);
  // The amplitude keeps exceeding its previous value until the clip binds,
  // after which it sits exactly on sqrt(P_max).
  for (std::size_t t = 1; t < result.state_trace.size(); ++t)
    EXPECT_GE(result.state_trace[t].amplitude[0], result.state_trace[t - 1].amplitude[0] - 1e-12);
  EXPECT_DOUBLE_EQ(result.state.amplitude[0], std::sqrt(data.power_budget));
  // Single-user sweeps land exactly on the weight pole (v' = 1/(uG) with an
  // echoed u); the floor turns that into a huge finite weight that cancels
  // from the next amplitude ratio, so the whole trace stays finite.
  bool floor_engaged = false;
  for (const auto& s : result.state_trace) {
    ASSERT_TRUE(std::isfinite(s.mse_weight[0]));
    ASSERT_TRUE(std::isfinite(s.amplitude[0]));
    if (s.mse_weight[0] >= 1.0 / pekit::kPcMseFloor) floor_engaged = true;
  }
  EXPECT_TRUE(floor_engaged);
}

TEST(WmmsePc, WeakCouplingDecouplesIntoFullPowerUsers) {
  const PcData data = pc_from_gain({1.5, 1e-6, 1e-6, 0.8}, 2, 0.1, 1.0);
  const auto result = pekit::wmmse_pc_solve(data);
  const auto p = pekit::wmmse_pc_power(result.state);
  EXPECT_NEAR(p[0], 1.0, 1e-3);
  EXPECT_NEAR(p[1], 1.0, 1e-3);
}

TEST(WmmsePc, StrongInterferenceMatchesGridSearch) {
  // Cross gains an order of magnitude above the direct ones; the noise level
  // dominates the received power, so the symmetric full-power point — the
  // only one reachable from the symmetric start — is also the grid optimum.
  const double budget = 1.0;
  const PcData data = pc_from_gain({1.0, 10.0, 10.0, 1.0}, 2, 200.0, budget);
  const auto result = pekit::wmmse_pc_solve(data);
  const double solver_rate = pekit::se_pc(data, pekit::wmmse_pc_power(result.state));

  double best = 0.0;
  const int resolution = 200;
  for (int i = 0; i <= resolution; ++i)
    for (int j = 0; j <= resolution; ++j) {
      const double rate = pekit::se_pc(
          data, {budget * i / resolution, budget * j / resolution});
      best = std::max(best, rate);
    }
  EXPECT_GE(solver_rate, 0.95 * best);
}

TEST(WmmsePc, InitialWeightsAreFiniteAndStable) {
  const auto inst = pekit::generate_channels(ProblemVariant::kPc,
                                             SizeSpec{.ue_count = 4, .bs_antennas = 6},
                                             ChannelModel::rayleigh(), 21);
  const auto s0 = pekit::wmmse_pc_initial_state(inst.pc);
  for (Eigen::Index k = 0; k < 4; ++k) {
    const double uvg = s0.receive_gain[k] * s0.amplitude[k] * inst.pc.gain(k, k);
    EXPECT_LT(uvg, 1.0);
    EXPECT_GT(s0.mse_weight[k], 1.0);
    EXPECT_TRUE(std::isfinite(s0.mse_weight[k]));
  }
  // The first sweep recomputes the weight from the same (u, v), bit for bit.
  const auto s1 = pekit::wmmse_pc_step(s0, inst.pc);
  for (Eigen::Index k = 0; k < 4; ++k) EXPECT_EQ(s1.mse_weight[k], s0.mse_weight[k]);
}

TEST(WmmsePc, FixedBeamDecompositionReproducesHandWrittenRecursion) {
  // An instance factored as G(k,j) = |w_j^H h_k| is the power-control view of
  // precoding with frozen unit beams.  Rebuild those scalar gains directly
  // from the beams and channels, write the three updates longhand, and the
  // trajectories must coincide.
  const auto inst = pekit::generate_channels(ProblemVariant::kPc,
                                             SizeSpec{.ue_count = 3, .bs_antennas = 4},
                                             ChannelModel::rayleigh(), 42);
  ASSERT_TRUE(inst.pc.has_decomposition);
  const Eigen::Index k_count = 3;

  pekit::WmmsePcConfig config;
  config.max_iterations = 30;
  config.tolerance = 0.0;
  config.record_trace = true;
  const auto result = pekit::wmmse_pc_solve(inst.pc, config);

  Eigen::MatrixXd t(k_count, k_count);
  for (Eigen::Index k = 0; k < k_count; ++k)
    for (Eigen::Index j = 0; j < k_count; ++j)
      t(k, j) = std::abs((inst.pc.beams.col(j).adjoint() * inst.pc.channel.col(k))(0, 0));

  const double v_max = std::sqrt(inst.pc.power_budget);
  std::vector<double> v(k_count, v_max / 2.0), u(k_count), z(k_count);
  for (Eigen::Index k = 0; k < k_count; ++k) {
    double denom = inst.pc.noise_power;
    for (Eigen::Index j = 0; j < k_count; ++j) denom += v[j] * v[j] * t(k, j) * t(k, j);
    u[k] = v[k] * t(k, k) / denom;
  }
  for (Eigen::Index k = 0; k < k_count; ++k)
    z[k] = 1.0 / std::max(1.0 - u[k] * v[k] * t(k, k), pekit::kPcMseFloor);

  for (std::size_t iter = 0; iter < result.state_trace.size(); ++iter) {
    std::vector<double> v2(k_count), u2(k_count), z2(k_count);
    for (Eigen::Index k = 0; k < k_count; ++k) {
      double vd = 0.0;
      for (Eigen::Index j = 0; j < k_count; ++j) vd += z[j] * u[j] * u[j] * t(j, k) * t(j, k);
      const double raw = z[k] * u[k] * t(k, k) / vd;
      v2[k] = std::min(std::max(raw, 0.0), v_max);
      double ud = inst.pc.noise_power;
      for (Eigen::Index j = 0; j < k_count; ++j) ud += v[j] * v[j] * t(k, j) * t(k, j);
      u2[k] = v[k] * t(k, k) / ud;
      z2[k] = 1.0 / std::max(1.0 - u[k] * v[k] * t(k, k), pekit::kPcMseFloor);
    }
    v = v2;
    u = u2;
    z = z2;
    for (Eigen::Index k = 0; k < k_count; ++k) {
      EXPECT_NEAR(result.state_trace[iter].amplitude[k], v[k], 1e-12);
      EXPECT_NEAR(result.state_trace[iter].receive_gain[k], u[k], 1e-12);
      EXPECT_NEAR(result.state_trace[iter].mse_weight[k], z[k], 1e-12);
    }
  }
  EXPECT_GT(pekit::se_pc(inst.pc, pekit::wmmse_pc_power(result.state)), 0.0);
}

TEST(WmmsePc, JointlyPermutedGainsYieldPermutedTrajectory) {
  const auto inst = pekit::generate_channels(ProblemVariant::kPc,
                                             SizeSpec{.ue_count = 3, .bs_antennas = 4},
                                             ChannelModel::rayleigh(), 33);
  const std::vector<Eigen::Index> perm = {1, 2, 0};
  Eigen::MatrixXd permuted_gain(3, 3);
  for (Eigen::Index a = 0; a < 3; ++a)
    for (Eigen::Index b = 0; b < 3; ++b) permuted_gain(a, b) = inst.pc.gain(perm[a], perm[b]);
  const auto permuted = pekit::make_pc_instance(permuted_gain, inst.pc.noise_power,
                                                inst.pc.power_budget);

  pekit::WmmsePcConfig config;
  config.max_iterations = 20;
  config.tolerance = 0.0;
  config.record_trace = true;
  const auto base = pekit::wmmse_pc_solve(inst.pc, config);
  const auto moved = pekit::wmmse_pc_solve(permuted.pc, config);
  ASSERT_EQ(base.state_trace.size(), moved.state_trace.size());
  for (std::size_t iter = 0; iter < base.state_trace.size(); ++iter)
    for (Eigen::Index k = 0; k < 3; ++k) {
      EXPECT_NEAR(moved.state_trace[iter].amplitude[k],
                  base.state_trace[iter].amplitude[perm[k]], 1e-12);
      EXPECT_NEAR(moved.state_trace[iter].receive_gain[k],
                  base.state_trace[iter].receive_gain[perm[k]], 1e-12);
      EXPECT_NEAR(moved.state_trace[iter].mse_weight[k],
                  base.state_trace[iter].mse_weight[perm[k]], 1e-12);
    }
}

}  // namespace
