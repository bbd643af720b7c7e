#include "pekit/channels.hpp"

#include <gtest/gtest.h>

#include <cmath>

namespace {

using pekit::ChannelModel;
using pekit::CMat;
using pekit::InstanceConstants;
using pekit::ProblemInstance;
using pekit::ProblemVariant;
using pekit::Rng;
using pekit::SizeSpec;

TEST(Units, DbmToWattReferencePoints) {
  EXPECT_DOUBLE_EQ(pekit::dbm_to_watt(30.0), 1.0);
  EXPECT_NEAR(pekit::dbm_to_watt(-80.0), 1e-11, 1e-26);
  EXPECT_NEAR(pekit::dbm_to_watt(0.0), 1e-3, 1e-18);
  EXPECT_NEAR(pekit::watt_to_dbm(pekit::dbm_to_watt(17.5)), 17.5, 1e-12);
}

TEST(Units, PathLossMatchesClosedForm) {
  const double d = 123.0;
  const double expected = std::pow(10.0, -(32.6 + 36.7 * std::log10(d)) / 10.0);
  EXPECT_NEAR(pekit::path_loss_linear(d), expected, expected * 1e-12);
  EXPECT_THROW(pekit::path_loss_linear(0.0), std::invalid_argument);
}

TEST(ChannelDraw, RayleighEntriesHaveUnitVariance) {
  Rng rng(77);
  const int trials = 10000;
  double second_moment = 0.0;
  double mean_re = 0.0;
  for (int t = 0; t < trials; ++t) {
    const auto draw = pekit::draw_channel_block(rng, 4, 2, ChannelModel::rayleigh());
    for (Eigen::Index r = 0; r < 4; ++r)
      for (Eigen::Index c = 0; c < 2; ++c) {
        second_moment += std::norm(draw.channel(r, c));
        mean_re += std::real(draw.channel(r, c));
      }
  }
  second_moment /= trials * 8.0;
  mean_re /= trials * 8.0;
  EXPECT_NEAR(second_moment, 1.0, 0.1);
  EXPECT_NEAR(mean_re, 0.0, 0.05);
}

TEST(ChannelDraw, LargeRicianFactorCollapsesToDeterministicPart) {
  Rng rng(5);
  const auto draw = pekit::draw_channel_block(rng, 8, 4, ChannelModel::rician(1e9));
  const double rel = (draw.channel - draw.deterministic).norm() / draw.deterministic.norm();
  EXPECT_LE(rel, 1e-3);
  // The deterministic part is unit-modulus entrywise.
  for (Eigen::Index r = 0; r < 8; ++r)
    for (Eigen::Index c = 0; c < 4; ++c)
      EXPECT_NEAR(std::abs(draw.deterministic(r, c)), 1.0, 1e-12);
}

TEST(ChannelDraw, SameSeedSameChannel) {
  const SizeSpec sizes{.ue_count = 3, .bs_antennas = 4};
  const auto a = pekit::generate_channels(ProblemVariant::kPs, sizes, ChannelModel::rayleigh(), 42);
  const auto b = pekit::generate_channels(ProblemVariant::kPs, sizes, ChannelModel::rayleigh(), 42);
  const auto c = pekit::generate_channels(ProblemVariant::kPs, sizes, ChannelModel::rayleigh(), 43);
  EXPECT_EQ((a.ps.channel - b.ps.channel).norm(), 0.0);
  EXPECT_GT((a.ps.channel - c.ps.channel).norm(), 1e-6);
}

TEST(ChannelDraw, PathLossScalesColumns) {
  const SizeSpec sizes{.ue_count = 2, .bs_antennas = 4};
  auto near_far = ChannelModel::rayleigh();
  near_far.distances_m = {10.0, 1000.0};
  const auto plain = pekit::generate_channels(ProblemVariant::kPs, sizes,
                                              ChannelModel::rayleigh(), 9);
  const auto scaled = pekit::generate_channels(ProblemVariant::kPs, sizes, near_far, 9);
  for (int k = 0; k < 2; ++k) {
    const double amp = std::sqrt(pekit::path_loss_linear(near_far.distances_m[k]));
    const double rel =
        (scaled.ps.channel.col(k) - amp * plain.ps.channel.col(k)).norm() /
        plain.ps.channel.col(k).norm();
    EXPECT_LE(rel, 1e-12);
  }
}

TEST(Generate, PbGainsAreSquaredMagnitudes) {
  const SizeSpec sizes{.ue_count = 5};
  const auto inst = pekit::generate_channels(ProblemVariant::kPb, sizes,
                                             ChannelModel::rayleigh(), 123);
  ASSERT_EQ(inst.pb.gain.size(), 5u);
  for (double g : inst.pb.gain) EXPECT_GE(g, 0.0);
  // Same seed drawn by hand: first block is one CN(0,1) scalar.
  Rng rng(123);
  const auto first = pekit::draw_channel_block(rng, 1, 1, ChannelModel::rayleigh());
  EXPECT_DOUBLE_EQ(inst.pb.gain[0], std::norm(first.channel(0, 0)));
}

TEST(Generate, PcGainsComeFromBeamChannelProducts) {
  const SizeSpec sizes{.ue_count = 3, .bs_antennas = 4};
  const auto inst = pekit::generate_channels(ProblemVariant::kPc, sizes,
                                             ChannelModel::rayleigh(), 321);
  ASSERT_TRUE(inst.pc.has_decomposition);
  for (Eigen::Index c = 0; c < 3; ++c)
    EXPECT_NEAR(inst.pc.beams.col(c).norm(), 1.0, 1e-12);
  for (Eigen::Index k = 0; k < 3; ++k)
    for (Eigen::Index j = 0; j < 3; ++j) {
      const std::complex<double> inner =
          (inst.pc.beams.col(j).adjoint() * inst.pc.channel.col(k))(0, 0);
      EXPECT_NEAR(inst.pc.gain(k, j), std::abs(inner), 1e-12);
    }
  EXPECT_THROW(pekit::generate_channels(ProblemVariant::kPc,
                                        SizeSpec{.ue_count = 5, .bs_antennas = 4},
                                        ChannelModel::rayleigh(), 1),
               std::invalid_argument);
}

TEST(Generate, PmValidatesStreamCount) {
  EXPECT_THROW(pekit::generate_channels(
                   ProblemVariant::kPm,
                   SizeSpec{.ue_count = 2, .bs_antennas = 4, .ue_antennas = 2, .stream_count = 3},
                   ChannelModel::rayleigh(), 1),
               std::invalid_argument);
  const auto inst = pekit::generate_channels(
      ProblemVariant::kPm,
      SizeSpec{.ue_count = 2, .bs_antennas = 4, .ue_antennas = 2, .stream_count = 2},
      ChannelModel::rayleigh(), 1);
  ASSERT_EQ(inst.pm.channel.size(), 2u);
  EXPECT_EQ(inst.pm.channel[0].rows(), 2);
  EXPECT_EQ(inst.pm.channel[0].cols(), 4);
}

// ---------------------------------------------------------------------------
// Objectives
// ---------------------------------------------------------------------------

TEST(Objective, PbRateClosedFormAndEdge) {
  EXPECT_NEAR(pekit::pb_user_rate(2.0, 3.0, 0.5, 1.0), 3.0 * std::log2(1.0 + 1.0 / 3.0), 1e-15);
  EXPECT_DOUBLE_EQ(pekit::pb_user_rate(2.0, 0.0, 0.5, 1.0), 0.0);
  EXPECT_DOUBLE_EQ(pekit::pb_user_rate(0.0, 3.0, 0.5, 1.0), 0.0);
  EXPECT_DOUBLE_EQ(pekit::objective_pb({1.0, 2.5, 0.5}), 4.0);
}

TEST(Objective, PsSingleUserIsPointToPointCapacity) {
  pekit::PsData data;
  data.channel = CMat::Zero(2, 1);
  data.channel(0, 0) = {3.0, 0.0};
  data.channel(1, 0) = {0.0, 4.0};
  data.noise_power = 2.0;
  data.power_budget = 1.0;
  // Matched beam at full power: |h^H w|^2 = |h|^2 * P = 25.
  CMat w = data.channel / data.channel.norm();
  EXPECT_NEAR(pekit::se_ps(data, w), std::log2(1.0 + 25.0 / 2.0), 1e-12);
}

TEST(Objective, PsTwoUserInterferenceByHand) {
  pekit::PsData data;
  data.channel = CMat::Zero(1, 2);
  data.channel(0, 0) = {1.0, 0.0};
  data.channel(0, 1) = {2.0, 0.0};
  data.noise_power = 1.0;
  CMat w = CMat::Zero(1, 2);
  w(0, 0) = {1.0, 0.0};
  w(0, 1) = {0.5, 0.0};
  // User 0: signal 1, interference |1*0.5|^2 = 0.25.
  // User 1: signal |2*0.5|^2 = 1, interference |2*1|^2 = 4.
  const double expected = std::log2(1.0 + 1.0 / 1.25) + std::log2(1.0 + 1.0 / 5.0);
  EXPECT_NEAR(pekit::se_ps(data, w), expected, 1e-12);
}

TEST(Objective, PmWithOneAntennaOneStreamMatchesPs) {
  // The log-det form with 1x1 blocks must agree with the scalar SINR form.
  const SizeSpec sizes{.ue_count = 3, .bs_antennas = 4, .ue_antennas = 1, .stream_count = 1};
  const auto inst = pekit::generate_channels(ProblemVariant::kPm, sizes,
                                             ChannelModel::rayleigh(), 2024);
  pekit::PsData ps;
  ps.channel.resize(4, 3);
  // PM stores h_k^T as a 1 x N_B row; the PS column is its conjugate so that
  // row * w == (column^H) * w.
  for (int k = 0; k < 3; ++k)
    ps.channel.col(k) = inst.pm.channel[k].row(0).adjoint();
  ps.noise_power = inst.pm.noise_power;
  Rng rng(7);
  std::vector<CMat> w_blocks;
  CMat w_flat(4, 3);
  for (int k = 0; k < 3; ++k) {
    CMat w(4, 1);
    for (int n = 0; n < 4; ++n) w(n, 0) = {rng.normal(), rng.normal()};
    w_blocks.push_back(w);
    w_flat.col(k) = w.col(0);
  }
  EXPECT_NEAR(pekit::se_pm(inst.pm, w_blocks), pekit::se_ps(ps, w_flat), 1e-12);
}

TEST(Objective, PcZeroPowerGivesZeroRate) {
  Eigen::MatrixXd g(2, 2);
  g << 1.0, 0.3, 0.2, 1.5;
  const auto inst = pekit::make_pc_instance(g, 0.5, 1.0);
  EXPECT_DOUBLE_EQ(pekit::se_pc(inst.pc, {0.0, 0.0}), 0.0);
  // Hand-computed two-user value.
  const double r0 = std::log2(1.0 + 1.0 * 0.4 / (0.09 * 0.6 + 0.5));
  const double r1 = std::log2(1.0 + 2.25 * 0.6 / (0.04 * 0.4 + 0.5));
  EXPECT_NEAR(pekit::se_pc(inst.pc, {0.4, 0.6}), r0 + r1, 1e-12);
}

// ---------------------------------------------------------------------------
// Validation and serialization
// ---------------------------------------------------------------------------

TEST(Validate, RejectsBadInstances) {
  ProblemInstance inst;
  inst.variant = ProblemVariant::kPb;
  inst.pb.gain = {1.0, -0.5};
  EXPECT_THROW(inst.validate(), std::invalid_argument);

  ProblemInstance pc;
  pc.variant = ProblemVariant::kPc;
  pc.pc.gain = Eigen::MatrixXd::Ones(2, 3);
  EXPECT_THROW(pc.validate(), std::invalid_argument);
}

TEST(Serialize, RoundTripsEveryVariant) {
  const std::vector<ProblemInstance> instances = {
      pekit::generate_channels(ProblemVariant::kPb, SizeSpec{.ue_count = 4},
                               ChannelModel::rayleigh(), 11),
      pekit::generate_channels(ProblemVariant::kPs, SizeSpec{.ue_count = 3, .bs_antennas = 4},
                               ChannelModel::rician(3.0), 12),
      pekit::generate_channels(
          ProblemVariant::kPm,
          SizeSpec{.ue_count = 2, .bs_antennas = 4, .ue_antennas = 2, .stream_count = 2},
          ChannelModel::rayleigh(), 13),
      pekit::generate_channels(ProblemVariant::kPc, SizeSpec{.ue_count = 3, .bs_antennas = 4},
                               ChannelModel::rayleigh(), 14),
  };
  for (const auto& inst : instances) {
    const std::string text = pekit::write_instance(inst);
    const auto back = pekit::read_instance(text);
    EXPECT_EQ(back.variant, inst.variant);
    // A second write must be byte-identical.
    EXPECT_EQ(pekit::write_instance(back), text);
    switch (inst.variant) {
      case ProblemVariant::kPb:
        EXPECT_EQ(back.pb.gain, inst.pb.gain);
        EXPECT_DOUBLE_EQ(back.pb.rate_floor, inst.pb.rate_floor);
        break;
      case ProblemVariant::kPs:
        EXPECT_EQ((back.ps.channel - inst.ps.channel).norm(), 0.0);
        EXPECT_DOUBLE_EQ(back.ps.noise_power, inst.ps.noise_power);
        break;
      case ProblemVariant::kPm:
        ASSERT_EQ(back.pm.channel.size(), inst.pm.channel.size());
        for (std::size_t k = 0; k < inst.pm.channel.size(); ++k)
          EXPECT_EQ((back.pm.channel[k] - inst.pm.channel[k]).norm(), 0.0);
        EXPECT_EQ(back.pm.stream_count, inst.pm.stream_count);
        break;
      case ProblemVariant::kPc:
        EXPECT_EQ((back.pc.gain - inst.pc.gain).norm(), 0.0);
        ASSERT_TRUE(back.pc.has_decomposition);
        EXPECT_EQ((back.pc.beams - inst.pc.beams).norm(), 0.0);
        EXPECT_EQ((back.pc.channel - inst.pc.channel).norm(), 0.0);
        break;
    }
  }
}

TEST(Serialize, RejectsCorruptedText) {
  const auto inst = pekit::generate_channels(ProblemVariant::kPs,
                                             SizeSpec{.ue_count = 2, .bs_antennas = 2},
                                             ChannelModel::rayleigh(), 1);
  const std::string text = pekit::write_instance(inst);
  EXPECT_THROW(pekit::read_instance("pekit-instance v2\n" + text.substr(text.find('\n') + 1)),
               std::invalid_argument);
  EXPECT_THROW(pekit::read_instance(text.substr(0, text.size() - 5)), std::invalid_argument);
  std::string wrong_field = text;
  wrong_field.replace(wrong_field.find("noise_power"), 11, "noise_wrong");
  EXPECT_THROW(pekit::read_instance(wrong_field), std::invalid_argument);
}

}  // namespace
