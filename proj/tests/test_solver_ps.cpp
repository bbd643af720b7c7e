#include "pekit/solvers/wmmse_ps.hpp"

#include <gtest/gtest.h>

#include <cmath>
#include <complex>
#include <vector>

#include "pekit/channels.hpp"

namespace {

using pekit::ChannelModel;
using pekit::CMat;
using pekit::CVec;
using pekit::ProblemVariant;
using pekit::PsData;
using pekit::SizeSpec;

PsData random_ps(std::int64_t n_b, std::int64_t k, std::uint64_t seed, double noise,
                 double budget) {
  pekit::InstanceConstants c;
  c.noise_power = noise;
  c.power_budget = budget;
  return pekit::generate_channels(ProblemVariant::kPs,
                                  SizeSpec{.ue_count = k, .bs_antennas = n_b},
                                  ChannelModel::rayleigh(), seed, c)
      .ps;
}

TEST(WmmsePs, SingleUserConvergesToMatchedFilterAtFullPower) {
  const PsData data = random_ps(4, 1, 99, 0.5, 2.0);
  const auto result = pekit::wmmse_ps_solve(data);
  ASSERT_TRUE(result.converged);
  const CVec w = result.state.precoder.col(0);
  const CVec h = data.channel.col(0);
  const double alignment = std::abs(h.dot(w)) / (h.norm() * w.norm());
  EXPECT_GE(alignment, 1.0 - 1e-9);
  EXPECT_NEAR(w.squaredNorm(), data.power_budget, 1e-6);
  const double capacity = std::log2(1.0 + data.power_budget * h.squaredNorm() / data.noise_power);
  EXPECT_NEAR(result.se_trace.back(), capacity, 1e-6);
}

TEST(WmmsePs, ObjectiveTraceIsMonotoneAndPowerFeasible) {
  for (std::uint64_t seed : {1u, 2u, 3u, 4u, 5u}) {
    const PsData data = random_ps(8, 4, seed, 0.1, 1.0);
    pekit::WmmsePsConfig config;
    config.max_iterations = 60;
    config.record_trace = true;
    const auto result = pekit::wmmse_ps_solve(data, config);
    for (std::size_t i = 1; i < result.se_trace.size(); ++i)
      EXPECT_GE(result.se_trace[i] - result.se_trace[i - 1], -1e-8)
          << "seed " << seed << " iteration " << i;
    for (const auto& s : result.state_trace)
      EXPECT_LE(s.precoder.squaredNorm(), data.power_budget + 1e-9);
  }
}

TEST(WmmsePs, JacobiSweepRevisitsEachBlockOnce) {
  const PsData data = random_ps(4, 3, 7, 0.2, 1.0);
  pekit::WmmsePsConfig config;
  config.max_iterations = 6;
  config.tolerance = 0.0;
  config.record_trace = true;
  const auto result = pekit::wmmse_ps_solve(data, config);
  ASSERT_GE(result.state_trace.size(), 4u);
  // Sweep 2 recomputes the precoder from the same statistics as sweep 1, so
  // the precoders agree bit for bit; likewise for the SE values.
  EXPECT_EQ((result.state_trace[1].precoder - result.state_trace[0].precoder).norm(), 0.0);
  EXPECT_EQ(result.se_trace[2], result.se_trace[1]);
  EXPECT_EQ((result.state_trace[3].precoder - result.state_trace[2].precoder).norm(), 0.0);
  // And sweep 3 actually moves.
  EXPECT_GT((result.state_trace[2].precoder - result.state_trace[1].precoder).norm(), 0.0);
}

TEST(WmmsePs, OrthogonalEqualGainChannelsSplitPowerEvenly) {
  PsData data;
  data.channel = CMat::Zero(2, 2);
  data.channel(0, 0) = {2.0, 0.0};
  data.channel(1, 1) = {2.0, 0.0};
  data.noise_power = 0.1;
  data.power_budget = 1.0;
  const auto result = pekit::wmmse_ps_solve(data);
  EXPECT_NEAR(result.state.precoder.col(0).squaredNorm(), 0.5, 1e-3);
  EXPECT_NEAR(result.state.precoder.col(1).squaredNorm(), 0.5, 1e-3);
  // No energy leaks into the other user's (orthogonal) direction.
  EXPECT_NEAR(std::abs(data.channel.col(0).dot(result.state.precoder.col(1))), 0.0, 1e-9);
}

// Exhaustive lower bound for N_B = K = 2: per user, beams swept over the arc
// between the zero-forcing direction and the matched-filter direction (the
// optimal beam lies in that plane with the two components phase-aligned),
// powers swept over the full-budget split.
double two_user_grid_bound(const PsData& data, int resolution) {
  const CVec h0 = data.channel.col(0);
  const CVec h1 = data.channel.col(1);
  const auto directions = [&](const CVec& own, const CVec& other) {
    CVec parallel = (other.dot(own) / other.squaredNorm()) * other;  // projection onto other
    CVec zf = own - parallel;
    return std::make_pair(CVec(zf / zf.norm()), CVec(parallel / parallel.norm()));
  };
  const auto [zf0, par0] = directions(h0, h1);
  const auto [zf1, par1] = directions(h1, h0);
  double best = 0.0;
  for (int i0 = 0; i0 <= resolution; ++i0) {
    const double t0 = M_PI_2 * i0 / resolution;
    for (int i1 = 0; i1 <= resolution; ++i1) {
      const double t1 = M_PI_2 * i1 / resolution;
      for (int ip = 0; ip <= resolution; ++ip) {
        const double p0 = data.power_budget * ip / resolution;
        CMat w(2, 2);
        w.col(0) = std::sqrt(p0) * (std::cos(t0) * zf0 + std::sin(t0) * par0);
        w.col(1) = std::sqrt(data.power_budget - p0) * (std::cos(t1) * zf1 + std::sin(t1) * par1);
        best = std::max(best, pekit::se_ps(data, w));
      }
    }
  }
  return best;
}

TEST(WmmsePs, TwoUserSolutionReachesGridBound) {
  const PsData data = random_ps(2, 2, 31, 0.2, 1.0);
  const auto result = pekit::wmmse_ps_solve(data);
  const double bound = two_user_grid_bound(data, 20);
  EXPECT_GE(result.se_trace.back(), 0.95 * bound);
}

TEST(WmmsePs, ZeroChannelReturnsZeroPrecoder) {
  PsData data;
  data.channel = CMat::Zero(3, 2);
  data.noise_power = 1.0;
  data.power_budget = 1.0;
  const auto result = pekit::wmmse_ps_solve(data);
  EXPECT_TRUE(result.converged);
  EXPECT_EQ(result.state.precoder.norm(), 0.0);
  ASSERT_EQ(result.se_trace.size(), 1u);
  EXPECT_EQ(result.se_trace[0], 0.0);
}

TEST(WmmsePs, PermutedUsersYieldPermutedTrajectory) {
  const PsData data = random_ps(4, 3, 55, 0.2, 1.0);
  PsData permuted = data;
  const std::vector<Eigen::Index> perm = {1, 2, 0};
  for (Eigen::Index i = 0; i < 3; ++i) permuted.channel.col(i) = data.channel.col(perm[i]);

  pekit::WmmsePsConfig config;
  config.max_iterations = 5;
  config.tolerance = 0.0;
  config.record_trace = true;
  const auto base = pekit::wmmse_ps_solve(data, config);
  const auto moved = pekit::wmmse_ps_solve(permuted, config);
  ASSERT_EQ(base.state_trace.size(), moved.state_trace.size());
  for (std::size_t t = 0; t < base.state_trace.size(); ++t)
    for (Eigen::Index i = 0; i < 3; ++i) {
      EXPECT_LE((moved.state_trace[t].precoder.col(i) -
                 base.state_trace[t].precoder.col(perm[i]))
                    .norm(),
                1e-12);
      EXPECT_NEAR(std::abs(moved.state_trace[t].receive_gain(i) -
                           base.state_trace[t].receive_gain(perm[i])),
                  0.0, 1e-12);
      EXPECT_NEAR(moved.state_trace[t].mse_weight(i), base.state_trace[t].mse_weight(perm[i]),
                  1e-12);
    }
}

TEST(WmmsePs, MseWeightsStayAboveOne) {
  const PsData data = random_ps(4, 4, 8, 0.3, 1.0);
  auto state = pekit::wmmse_ps_initial_state(data);
  for (int i = 0; i < 20; ++i) {
    state = pekit::wmmse_ps_step(state, data);
    for (Eigen::Index k = 0; k < 4; ++k) EXPECT_GE(state.mse_weight(k), 1.0);
  }
}

}  // namespace
