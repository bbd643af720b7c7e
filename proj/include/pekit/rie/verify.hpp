#pragma once

// Machine check that the re-expressed iterations reproduce the solver sweeps.
// Each trial draws a fresh instance, packs the solver's initial state into a
// representation tensor, and then advances both forms side by side; the error
// at an iteration is the largest entrywise difference between the packed
// solver state and the representation tensor, so it also covers the carried
// constants (channels, gains) and the replicated scalars.
//
// Trials cycle through the small-size corner cases on purpose: single-user
// sets exercise the empty-pool convention, and the multi-antenna cycle
// includes single-stream subsets.  Multi-antenna channels are damped by a
// fixed factor because that sweep's updates are cubic and random unit-scale
// channels blow up within a few iterations; both forms see the identical
// damped instance, so the comparison is unaffected.
//
// Trials are independent (each has its own seed), so any execution order
// produces the same report.

#include <cmath>
#include <cstdint>
#include <vector>

#include "pekit/channels.hpp"
#include "pekit/rie/representation.hpp"
#include "pekit/rie/steps.hpp"

namespace pekit {

struct RieVerifyOptions {
  GdPbRule pb_rule = GdPbRule::kGradient;
  double pb_step_size = 1e-2;
  PmCoupling pm_coupling = PmCoupling::kOwnChannel;
  double pm_channel_scale = 0.1;  // keeps the cubic sweep bounded over the horizon
};

struct RieTrialRow {
  std::int64_t trial = 0;
  std::int64_t iteration = 0;  // 1-based sweep count
  double max_abs_error = 0.0;
};

struct RieEquivalenceReport {
  ProblemVariant variant = ProblemVariant::kPs;
  bool pass = false;
  double worst_error = 0.0;
  double tolerance = 0.0;
  std::int64_t trials = 0;
  std::int64_t iterations = 0;
  std::vector<RieTrialRow> rows;  // one per (trial, iteration)
};

inline double max_abs_diff(const Tensor& a, const Tensor& b) {
  if (!same_shape(a, b)) {
    throw std::invalid_argument("max_abs_diff: shapes differ: " + shape_str(a.shape()) +
                                " vs " + shape_str(b.shape()));
  }
  double worst = 0.0;
  const double* pa = a.data();
  const double* pb = b.data();
  for (std::int64_t i = 0; i < a.size(); ++i) {
    const double err = std::abs(pa[i] - pb[i]);
    if (std::isnan(err) || err > worst) worst = err;
  }
  return worst;
}

inline RieEquivalenceReport verify_rie_equivalence(ProblemVariant variant,
                                                   std::int64_t trials,
                                                   std::int64_t iterations, double tolerance,
                                                   std::uint64_t seed,
                                                   const RieVerifyOptions& options = {}) {
  RieEquivalenceReport report;
  report.variant = variant;
  report.tolerance = tolerance;
  report.trials = trials;
  report.iterations = iterations;
  report.rows.reserve(static_cast<std::size_t>(trials * iterations));
  bool all_within = true;

  for (std::int64_t t = 0; t < trials; ++t) {
    const std::uint64_t trial_seed = seed + static_cast<std::uint64_t>(t);
    SizeSpec sizes;
    switch (variant) {
      case ProblemVariant::kPb:
        sizes.ue_count = 1 + t % 4;
        break;
      case ProblemVariant::kPs:
        sizes.ue_count = 1 + t % 4;
        sizes.bs_antennas = std::int64_t{2} << ((t / 4) % 3);  // 2, 4, 8
        break;
      case ProblemVariant::kPm:
        sizes.ue_count = 1 + t % 2;
        sizes.ue_antennas = 1 + (t / 2) % 2;
        sizes.stream_count = std::min<std::int64_t>(sizes.ue_antennas, 1 + (t / 4) % 2);
        sizes.bs_antennas = 4;
        break;
      case ProblemVariant::kPc:
        sizes.ue_count = 1 + t % 4;
        sizes.bs_antennas = 4;
        break;
    }
    ProblemInstance inst =
        generate_channels(variant, sizes, ChannelModel::rayleigh(), trial_seed);

    const auto record = [&](std::int64_t iteration, double err) {
      report.rows.push_back({t, iteration, err});
      if (std::isnan(err) || err > report.worst_error) report.worst_error = err;
      all_within = all_within && err <= tolerance;
    };

    switch (variant) {
      case ProblemVariant::kPb: {
        const PbData& data = inst.pb;
        GdPbState s = gd_pb_initial_state(data);
        Tensor d = pack_pb(data, s);
        for (std::int64_t it = 1; it <= iterations; ++it) {
          s = gd_pb_step(s, data, options.pb_step_size, options.pb_rule);
          d = rie_pb_step(d, data.noise_density, data.rate_floor, data.power_budget,
                          options.pb_step_size, options.pb_rule);
          record(it, max_abs_diff(pack_pb(data, s), d));
        }
        break;
      }
      case ProblemVariant::kPs: {
        const PsData& data = inst.ps;
        WmmsePsState s = wmmse_ps_initial_state(data);
        Tensor d = pack_ps(data, s);
        for (std::int64_t it = 1; it <= iterations; ++it) {
          s = wmmse_ps_step(s, data);
          d = rie_ps_step(d, data.noise_power, data.power_budget);
          record(it, max_abs_diff(pack_ps(data, s), d));
        }
        break;
      }
      case ProblemVariant::kPm: {
        PmData data = inst.pm;
        for (auto& h : data.channel) h *= options.pm_channel_scale;
        WmmsePmState s = wmmse_pm_initial_state(data);
        Tensor d = pack_pm(data, s);
        for (std::int64_t it = 1; it <= iterations; ++it) {
          s = wmmse_pm_step(s, data, options.pm_coupling);
          d = rie_pm_step(d, options.pm_coupling, sizes.ue_antennas, data.stream_count);
          record(it, max_abs_diff(pack_pm(data, s), d));
        }
        break;
      }
      case ProblemVariant::kPc: {
        const PcData& data = inst.pc;
        WmmsePcState s = wmmse_pc_initial_state(data);
        Tensor d = pack_pc(data, s);
        for (std::int64_t it = 1; it <= iterations; ++it) {
          s = wmmse_pc_step(s, data);
          d = rie_pc_step(d, data.noise_power, data.power_budget);
          record(it, max_abs_diff(pack_pc(data, s), d));
        }
        break;
      }
    }
  }

  report.pass = all_within;
  return report;
}

}  // namespace pekit
