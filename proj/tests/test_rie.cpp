#include "pekit/rie/verify.hpp"

#include <gtest/gtest.h>

#include <cmath>
#include <cstdint>
#include <stdexcept>

#include "pekit/channels.hpp"
#include "pekit/permutation.hpp"
#include "pekit/rie/representation.hpp"
#include "pekit/rie/steps.hpp"

namespace {

using pekit::AxisPerm;
using pekit::ChannelModel;
using pekit::PermutationScheme;
using pekit::PmCoupling;
using pekit::ProblemVariant;
using pekit::ProcessorKind;
using pekit::Rng;
using pekit::SizeSpec;
using pekit::Tensor;
using pekit::TemplateKind;

// ---------------------------------------------------------------------------
// Trajectory equivalence against the solver sweeps
// ---------------------------------------------------------------------------

TEST(RieEquivalence, BandwidthPowerMatchesSweep) {
  const auto report =
      pekit::verify_rie_equivalence(ProblemVariant::kPb, 12, 20, 1e-9, 0xb0);
  EXPECT_TRUE(report.pass);
  EXPECT_LE(report.worst_error, 1e-9);
  EXPECT_EQ(static_cast<std::int64_t>(report.rows.size()), 12 * 20);
}

TEST(RieEquivalence, BandwidthPowerMatchesAlternateRule) {
  pekit::RieVerifyOptions options;
  options.pb_rule = pekit::GdPbRule::kAlternate;
  const auto report =
      pekit::verify_rie_equivalence(ProblemVariant::kPb, 8, 20, 1e-9, 0xb1, options);
  EXPECT_TRUE(report.pass);
}

TEST(RieEquivalence, BeamformingMatchesSweep) {
  const auto report =
      pekit::verify_rie_equivalence(ProblemVariant::kPs, 12, 10, 1e-9, 0xc0);
  EXPECT_TRUE(report.pass);
  EXPECT_LE(report.worst_error, 1e-9);
}

TEST(RieEquivalence, MultiAntennaMatchesSweepOwnChannel) {
  const auto report =
      pekit::verify_rie_equivalence(ProblemVariant::kPm, 8, 10, 1e-9, 0xd0);
  EXPECT_TRUE(report.pass);
}

TEST(RieEquivalence, MultiAntennaMatchesSweepCrossChannel) {
  pekit::RieVerifyOptions options;
  options.pm_coupling = PmCoupling::kCrossChannel;
  const auto report =
      pekit::verify_rie_equivalence(ProblemVariant::kPm, 8, 10, 1e-9, 0xd1, options);
  EXPECT_TRUE(report.pass);
}

TEST(RieEquivalence, PowerControlMatchesSweep) {
  const auto report =
      pekit::verify_rie_equivalence(ProblemVariant::kPc, 12, 20, 1e-9, 0xe0);
  EXPECT_TRUE(report.pass);
  EXPECT_LE(report.worst_error, 1e-9);
}

// The single-user amplitude ramp drives the residual MSE onto its floor; the
// re-expressed form carries the same floor, so the two trajectories stay in
// lockstep straight through the spike in the weight.
TEST(RieEquivalence, PowerControlSingleUserFloorStaysInLockstep) {
  Eigen::MatrixXd g(1, 1);
  g(0, 0) = 2.0;
  const pekit::PcData data = pekit::make_pc_instance(g, 0.5, 1.0).pc;
  pekit::WmmsePcState s = pekit::wmmse_pc_initial_state(data);
  Tensor d = pekit::pack_pc(data, s);
  bool floor_hit = false;
  for (int it = 0; it < 12; ++it) {
    s = pekit::wmmse_pc_step(s, data);
    d = pekit::rie_pc_step(d, data.noise_power, data.power_budget);
    EXPECT_LE(pekit::max_abs_diff(pekit::pack_pc(data, s), d), 1e-9);
    if (s.mse_weight[0] >= 1.0 / pekit::kPcMseFloor) floor_hit = true;
  }
  EXPECT_TRUE(floor_hit);
}

// The multiplier is shared; every user's combiner rebuilds it from the same
// pool, so the per-column copies agree to rounding.
TEST(RieEquivalence, BandwidthPowerMultiplierColumnsStayConsistent) {
  SizeSpec sizes;
  sizes.ue_count = 3;
  const auto inst =
      pekit::generate_channels(ProblemVariant::kPb, sizes, ChannelModel::rayleigh(), 7);
  Tensor d = pekit::pack_pb(inst.pb, pekit::gd_pb_initial_state(inst.pb));
  for (int it = 0; it < 20; ++it) {
    d = pekit::rie_pb_step(d, inst.pb.noise_density, inst.pb.rate_floor,
                           inst.pb.power_budget, 1e-2, pekit::GdPbRule::kGradient);
  }
  for (std::int64_t k = 1; k < d.dim(1); ++k) {
    EXPECT_NEAR(d.at({pekit::kPbSlotPowerMultiplier, k}),
                d.at({pekit::kPbSlotPowerMultiplier, 0}), 1e-12);
  }
}

// ---------------------------------------------------------------------------
// Structure reports
// ---------------------------------------------------------------------------

TEST(RieStructure, BandwidthPowerIsOneOrdinaryRecursion) {
  const auto report =
      pekit::pb_recursion_stack(1.0, 1.0, 1.0, 1e-2, pekit::GdPbRule::kGradient).report();
  ASSERT_EQ(report.recursions.size(), 1u);
  EXPECT_EQ(report.recursions[0].kind, TemplateKind::ape1);
  EXPECT_EQ(report.attention_template_count(), 0);
  EXPECT_EQ(report.attention_processor_count(), 0);
  EXPECT_FALSE(report.has_output_function);
}

TEST(RieStructure, BeamformingHasOnePairwiseSlotOnUserDim) {
  const auto report = pekit::ps_recursion_stack(1.0, 1.0).report();
  ASSERT_EQ(report.recursions.size(), 2u);
  EXPECT_EQ(report.recursions[0].dim, "user");
  EXPECT_EQ(report.recursions[0].kind, TemplateKind::ape2);
  EXPECT_TRUE(report.recursions[0].attention);
  EXPECT_EQ(report.recursions[1].kind, TemplateKind::ape1);
  EXPECT_FALSE(report.recursions[1].attention);
  EXPECT_EQ(report.attention_template_count(), 1);
  EXPECT_EQ(report.attention_processor_count(), 1);
  EXPECT_FALSE(report.has_output_function);
}

TEST(RieStructure, MultiAntennaHasTwoPairwiseSlotsOnStreamDim) {
  const auto report =
      pekit::pm_recursion_stack(PmCoupling::kOwnChannel, 2, 2, 2).report();
  ASSERT_EQ(report.recursions.size(), 3u);
  EXPECT_EQ(report.recursions[0].dim, "stream");
  EXPECT_EQ(report.recursions[0].kind, TemplateKind::npe2);
  EXPECT_EQ(report.recursions[1].kind, TemplateKind::npe1);
  EXPECT_EQ(report.recursions[2].kind, TemplateKind::ape1);
  EXPECT_EQ(report.attention_template_count(), 1);
  EXPECT_EQ(report.attention_processor_count(), 2);
  EXPECT_TRUE(report.has_output_function);
}

TEST(RieStructure, PowerControlIsAllOrdinaryWithSelfInclusivePool) {
  const auto report = pekit::pc_recursion_stack(1.0, 1.0).report();
  ASSERT_EQ(report.recursions.size(), 2u);
  EXPECT_EQ(report.recursions[0].kind, TemplateKind::ape1);
  EXPECT_EQ(report.recursions[1].kind, TemplateKind::ape1);
  EXPECT_TRUE(report.recursions[0].include_self);
  EXPECT_FALSE(report.recursions[1].include_self);
  EXPECT_EQ(report.attention_template_count(), 0);
  EXPECT_EQ(report.attention_processor_count(), 0);
  EXPECT_TRUE(report.has_output_function);
}

// The per-user dual search repeats the solver's constants; the pairs must
// never drift apart, or the two forms run different searches.
TEST(RieStructure, DualSearchConstantsStayInLockstep) {
  EXPECT_EQ(pekit::kRiePsEigenFloorRatio, pekit::kPsEigenFloorRatio);
  EXPECT_EQ(pekit::kRiePsMassFloorRatio, pekit::kPsMassFloorRatio);
  EXPECT_EQ(pekit::kRiePsDualTolerance, pekit::kPsDualTolerance);
  EXPECT_EQ(pekit::kRiePsDualMaxDoublings, pekit::kPsDualMaxDoublings);
  EXPECT_EQ(pekit::kRiePsDualMaxHalvings, pekit::kPsDualMaxHalvings);
}

// ---------------------------------------------------------------------------
// Step equivariance under the layout's permutation scheme
// ---------------------------------------------------------------------------

TEST(RieEquivariance, BandwidthPowerStepUnderUserPermutations) {
  const std::int64_t k_count = 4;
  PermutationScheme scheme;
  scheme.axes = {AxisPerm::fixed_axis(), AxisPerm::arbitrary(0, k_count)};
  const auto f = [](const Tensor& x) {
    return pekit::rie_pb_step(x, 1.0, 1.0, 1.0, 1e-2, pekit::GdPbRule::kGradient);
  };
  Rng rng(11);
  const auto report = pekit::check_equivariance(
      f, scheme, scheme,
      [&](Rng& r) { return pekit::uniform_sampler({pekit::kPbSlotCount, k_count}, 0.1, 1.5)(r); },
      50, 1e-9, rng);
  EXPECT_TRUE(report.pass);
}

TEST(RieEquivariance, BeamformingStepUnderUserAndAntennaPermutations) {
  SizeSpec sizes;
  sizes.ue_count = 3;
  sizes.bs_antennas = 4;
  PermutationScheme scheme;
  scheme.axes = {AxisPerm::fixed_axis(), AxisPerm::arbitrary(0, sizes.bs_antennas),
                 AxisPerm::arbitrary(1, sizes.ue_count)};
  const auto f = [](const Tensor& x) { return pekit::rie_ps_step(x, 1.0, 1.0); };
  std::uint64_t instance_seed = 100;
  const auto sample = [&](Rng&) {
    const auto inst = pekit::generate_channels(ProblemVariant::kPs, sizes,
                                               ChannelModel::rayleigh(), instance_seed++);
    return pekit::pack_ps(inst.ps, pekit::wmmse_ps_initial_state(inst.ps));
  };
  Rng rng(12);
  const auto report = pekit::check_equivariance(f, scheme, scheme, sample, 50, 1e-9, rng);
  EXPECT_TRUE(report.pass);
}

TEST(RieEquivariance, MultiAntennaStepUnderNestedJointPermutations) {
  SizeSpec sizes;
  sizes.ue_count = 2;
  sizes.bs_antennas = 3;
  sizes.ue_antennas = 2;
  sizes.stream_count = 2;
  // One shared user permutation moves both the receive-antenna blocks and the
  // stream blocks; the inner families permute freely and independently.
  PermutationScheme scheme;
  scheme.axes = {AxisPerm::fixed_axis(), AxisPerm::arbitrary(0, sizes.bs_antennas),
                 AxisPerm::nested(1, 2, sizes.ue_count, sizes.ue_antennas),
                 AxisPerm::nested(1, 3, sizes.ue_count, sizes.stream_count)};
  const auto f = [&](const Tensor& x) {
    return pekit::rie_pm_step(x, PmCoupling::kOwnChannel, sizes.ue_antennas,
                              sizes.stream_count);
  };
  std::uint64_t instance_seed = 200;
  const auto sample = [&](Rng&) {
    auto inst = pekit::generate_channels(ProblemVariant::kPm, sizes,
                                         ChannelModel::rayleigh(), instance_seed++);
    for (auto& h : inst.pm.channel) h *= 0.1;
    return pekit::pack_pm(inst.pm, pekit::wmmse_pm_initial_state(inst.pm));
  };
  Rng rng(13);
  const auto report = pekit::check_equivariance(f, scheme, scheme, sample, 50, 1e-9, rng);
  EXPECT_TRUE(report.pass);
}

TEST(RieEquivariance, PowerControlStepUnderJointPermutations) {
  SizeSpec sizes;
  sizes.ue_count = 4;
  sizes.bs_antennas = 4;
  PermutationScheme scheme;
  scheme.axes = {AxisPerm::fixed_axis(), AxisPerm::arbitrary(0, sizes.ue_count),
                 AxisPerm::arbitrary(0, sizes.ue_count)};
  const auto f = [](const Tensor& x) { return pekit::rie_pc_step(x, 1.0, 1.0); };
  std::uint64_t instance_seed = 300;
  const auto sample = [&](Rng&) {
    const auto inst = pekit::generate_channels(ProblemVariant::kPc, sizes,
                                               ChannelModel::rayleigh(), instance_seed++);
    return pekit::pack_pc(inst.pc, pekit::wmmse_pc_initial_state(inst.pc));
  };
  Rng rng(14);
  const auto report = pekit::check_equivariance(f, scheme, scheme, sample, 50, 1e-9, rng);
  EXPECT_TRUE(report.pass);
}

// Negative control: the power-control layout couples rows and columns through
// one permutation.  Permuting them independently must break the symmetry.
TEST(RieEquivariance, PowerControlStepFailsUnderIndependentPermutations) {
  SizeSpec sizes;
  sizes.ue_count = 4;
  sizes.bs_antennas = 4;
  PermutationScheme scheme;
  scheme.axes = {AxisPerm::fixed_axis(), AxisPerm::arbitrary(0, sizes.ue_count),
                 AxisPerm::arbitrary(1, sizes.ue_count)};
  const auto f = [](const Tensor& x) { return pekit::rie_pc_step(x, 1.0, 1.0); };
  std::uint64_t instance_seed = 400;
  const auto sample = [&](Rng&) {
    const auto inst = pekit::generate_channels(ProblemVariant::kPc, sizes,
                                               ChannelModel::rayleigh(), instance_seed++);
    return pekit::pack_pc(inst.pc, pekit::wmmse_pc_initial_state(inst.pc));
  };
  Rng rng(15);
  const auto report = pekit::check_equivariance(f, scheme, scheme, sample, 20, 1e-9, rng);
  EXPECT_FALSE(report.pass);
}

// ---------------------------------------------------------------------------
// Layout contracts
// ---------------------------------------------------------------------------

TEST(RieRepresentation, MultiAntennaStepRejectsOffBlockEntries) {
  SizeSpec sizes;
  sizes.ue_count = 2;
  sizes.bs_antennas = 3;
  sizes.ue_antennas = 2;
  sizes.stream_count = 1;
  const auto inst =
      pekit::generate_channels(ProblemVariant::kPm, sizes, ChannelModel::rayleigh(), 5);
  Tensor d = pekit::pack_pm(inst.pm, pekit::wmmse_pm_initial_state(inst.pm));
  d.at_mut({pekit::kPmSlotTransmitRe, 0, 0, 1}) = 1e-3;  // row block 0, column block 1
  EXPECT_THROW(pekit::rie_pm_step(d, PmCoupling::kOwnChannel, sizes.ue_antennas,
                                  sizes.stream_count),
               std::invalid_argument);
}

TEST(RieRepresentation, PackUnpackRoundTrips) {
  SizeSpec sizes;
  sizes.ue_count = 3;
  sizes.bs_antennas = 4;
  sizes.ue_antennas = 2;
  sizes.stream_count = 2;

  const auto pb =
      pekit::generate_channels(ProblemVariant::kPb, sizes, ChannelModel::rayleigh(), 21).pb;
  const auto pb_state = pekit::gd_pb_initial_state(pb);
  const auto pb_back = pekit::unpack_pb(pekit::pack_pb(pb, pb_state));
  EXPECT_EQ(pb_back.power, pb_state.power);
  EXPECT_EQ(pb_back.bandwidth, pb_state.bandwidth);
  EXPECT_EQ(pb_back.rate_multiplier, pb_state.rate_multiplier);
  EXPECT_EQ(pb_back.power_multiplier, pb_state.power_multiplier);

  const auto ps =
      pekit::generate_channels(ProblemVariant::kPs, sizes, ChannelModel::rayleigh(), 22).ps;
  const auto ps_state = pekit::wmmse_ps_initial_state(ps);
  const auto ps_back = pekit::unpack_ps(pekit::pack_ps(ps, ps_state));
  EXPECT_EQ((ps_back.precoder - ps_state.precoder).norm(), 0.0);
  EXPECT_EQ((ps_back.receive_gain - ps_state.receive_gain).norm(), 0.0);
  EXPECT_EQ((ps_back.mse_weight - ps_state.mse_weight).norm(), 0.0);

  const auto pm =
      pekit::generate_channels(ProblemVariant::kPm, sizes, ChannelModel::rayleigh(), 23).pm;
  const auto pm_state = pekit::wmmse_pm_initial_state(pm);
  const auto pm_back = pekit::unpack_pm(pekit::pack_pm(pm, pm_state), sizes.ue_count,
                                        sizes.ue_antennas, sizes.stream_count);
  for (std::size_t k = 0; k < pm_state.receive.size(); ++k) {
    EXPECT_EQ((pm_back.receive[k] - pm_state.receive[k]).norm(), 0.0);
    EXPECT_EQ((pm_back.transmit[k] - pm_state.transmit[k]).norm(), 0.0);
  }

  const auto pc =
      pekit::generate_channels(ProblemVariant::kPc, sizes, ChannelModel::rayleigh(), 24).pc;
  const auto pc_state = pekit::wmmse_pc_initial_state(pc);
  const auto pc_back = pekit::unpack_pc(pekit::pack_pc(pc, pc_state));
  EXPECT_EQ(pc_back.amplitude, pc_state.amplitude);
  EXPECT_EQ(pc_back.receive_gain, pc_state.receive_gain);
  EXPECT_EQ(pc_back.mse_weight, pc_state.mse_weight);
}

}  // namespace
