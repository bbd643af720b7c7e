#pragma once

// Problem instances for the four resource-allocation variants, plus the
// fading-channel generator that produces them.
//
//   PB  power & bandwidth allocation: per-user power gains g_k, noise
//       spectral density, a power budget, and a per-user rate floor.
//   PS  multi-user MISO precoding: complex channel matrix H (one column per
//       user), noise power, power budget.
//   PM  multi-user MIMO precoding: one channel matrix per user plus a
//       per-user stream count.
//   PC  power control on an interference channel: nonnegative gain matrix G,
//       optionally carrying the (beams, channel) pair it was factored from.
//
// All powers are linear-scale watts; dBm values are converted at the edge
// (config parsing, tests) via dbm_to_watt.

#include <Eigen/Dense>

#include <cmath>
#include <complex>
#include <cstdint>
#include <cstdio>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include "pekit/rng.hpp"
#include "pekit/serialize.hpp"

namespace pekit {

using Cplx = std::complex<double>;
using CMat = Eigen::MatrixXcd;
using CVec = Eigen::VectorXcd;

// ---------------------------------------------------------------------------
// Unit conversions
// ---------------------------------------------------------------------------

inline double dbm_to_watt(double dbm) { return std::pow(10.0, (dbm - 30.0) / 10.0); }

inline double watt_to_dbm(double watt) {
  if (watt <= 0.0) throw std::invalid_argument("watt_to_dbm: power must be positive");
  return 10.0 * std::log10(watt) + 30.0;
}

// Distance-dependent attenuation 32.6 + 36.7*log10(d_meters), returned as a
// linear power scale factor (<= 1 for d >= ~0.13 m).
inline double path_loss_linear(double distance_m) {
  if (distance_m <= 0.0) throw std::invalid_argument("path_loss_linear: distance must be positive");
  const double loss_db = 32.6 + 36.7 * std::log10(distance_m);
  return std::pow(10.0, -loss_db / 10.0);
}

// ---------------------------------------------------------------------------
// Variants and sizes
// ---------------------------------------------------------------------------

enum class ProblemVariant { kPb, kPs, kPm, kPc };

inline const char* variant_name(ProblemVariant v) {
  switch (v) {
    case ProblemVariant::kPb: return "PB";
    case ProblemVariant::kPs: return "PS";
    case ProblemVariant::kPm: return "PM";
    case ProblemVariant::kPc: return "PC";
  }
  throw std::logic_error("variant_name: unreachable");
}

inline ProblemVariant variant_from_name(const std::string& name) {
  if (name == "PB") return ProblemVariant::kPb;
  if (name == "PS") return ProblemVariant::kPs;
  if (name == "PM") return ProblemVariant::kPm;
  if (name == "PC") return ProblemVariant::kPc;
  throw std::invalid_argument("unknown variant '" + name + "' (expected PB, PS, PM, or PC)");
}

struct SizeSpec {
  std::int64_t ue_count = 1;      // users (PB, PS, PM) or Tx/Rx pairs (PC)
  std::int64_t bs_antennas = 1;   // N_B (PS, PM, PC decomposition)
  std::int64_t ue_antennas = 1;   // N_U (PM)
  std::int64_t stream_count = 1;  // data streams per user (PM)
};

// Scalar constants attached to an instance.  Defaults keep unit scale; real
// deployments set them from dBm via config.
struct InstanceConstants {
  double power_budget = 1.0;   // P_max, watts
  double noise_power = 1.0;    // sigma_0^2, watts (PS, PM, PC)
  double noise_density = 1.0;  // N_0, watts/Hz (PB)
  double rate_floor = 1.0;     // s_0, bits/s (PB)
};

// ---------------------------------------------------------------------------
// Channel model
// ---------------------------------------------------------------------------

struct ChannelModel {
  enum class Kind { kRayleigh, kRician };
  Kind kind = Kind::kRayleigh;
  double rician_factor = 10.0;        // power ratio of deterministic to scattered part
  std::vector<double> distances_m;    // per-user distances; empty = no path loss

  static ChannelModel rayleigh() { return ChannelModel{}; }
  static ChannelModel rician(double factor, std::vector<double> distances = {}) {
    if (factor < 0.0) throw std::invalid_argument("ChannelModel: rician factor must be >= 0");
    ChannelModel m;
    m.kind = Kind::kRician;
    m.rician_factor = factor;
    m.distances_m = std::move(distances);
    return m;
  }
};

// One user's channel block together with the deterministic component it was
// mixed from (identity for Rayleigh draws, exposed so the large-factor limit
// is testable).
struct ChannelDraw {
  CMat channel;
  CMat deterministic;  // unit-modulus line-of-sight part, before path loss
};

// Draws a rows x cols block for a single user.  Rician blocks are
//   sqrt(f/(1+f)) * L + sqrt(1/(1+f)) * N
// with L a rank-one unit-modulus array-response product whose angles come
// from the same seeded stream, and N entrywise CN(0,1).
inline ChannelDraw draw_channel_block(Rng& rng, std::int64_t rows, std::int64_t cols,
                                      const ChannelModel& model) {
  if (rows <= 0 || cols <= 0) throw std::invalid_argument("draw_channel_block: sizes must be positive");
  ChannelDraw out;
  out.channel.resize(rows, cols);
  out.deterministic = CMat::Ones(rows, cols);
  if (model.kind == ChannelModel::Kind::kRician) {
    const double theta = rng.uniform(0.0, 2.0 * M_PI);  // departure angle
    const double phi = rng.uniform(0.0, 2.0 * M_PI);    // arrival angle
    for (std::int64_t r = 0; r < rows; ++r) {
      for (std::int64_t c = 0; c < cols; ++c) {
        const double phase = M_PI * (std::sin(theta) * static_cast<double>(c) +
                                     std::sin(phi) * static_cast<double>(r));
        out.deterministic(r, c) = std::polar(1.0, phase);
      }
    }
  }
  constexpr double kInvSqrt2 = 0.70710678118654752440;
  for (std::int64_t r = 0; r < rows; ++r) {
    for (std::int64_t c = 0; c < cols; ++c) {
      const double re = rng.normal();
      const double im = rng.normal();
      const Cplx scattered = Cplx(re * kInvSqrt2, im * kInvSqrt2);
      if (model.kind == ChannelModel::Kind::kRician) {
        const double f = model.rician_factor;
        out.channel(r, c) = std::sqrt(f / (1.0 + f)) * out.deterministic(r, c) +
                            std::sqrt(1.0 / (1.0 + f)) * scattered;
      } else {
        out.channel(r, c) = scattered;
      }
    }
  }
  return out;
}

// ---------------------------------------------------------------------------
// Instance data per variant
// ---------------------------------------------------------------------------

struct PbData {
  std::vector<double> gain;  // g_k >= 0, one per user
  double noise_density = 1.0;
  double power_budget = 1.0;
  double rate_floor = 1.0;
};

struct PsData {
  CMat channel;  // N_B x K, column k = user k's channel
  double noise_power = 1.0;
  double power_budget = 1.0;
};

struct PmData {
  std::vector<CMat> channel;  // per user, N_U x N_B
  std::int64_t stream_count = 1;
  double noise_power = 1.0;
  double power_budget = 1.0;
};

struct PcData {
  Eigen::MatrixXd gain;  // K x K, gain(k, j) couples transmitter j to receiver k
  bool has_decomposition = false;
  CMat beams;    // N_B x K, unit columns (when factored)
  CMat channel;  // N_B x K (when factored)
  double noise_power = 1.0;
  double power_budget = 1.0;
};

struct ProblemInstance {
  ProblemVariant variant = ProblemVariant::kPs;
  PbData pb;
  PsData ps;
  PmData pm;
  PcData pc;

  std::int64_t ue_count() const {
    switch (variant) {
      case ProblemVariant::kPb: return static_cast<std::int64_t>(pb.gain.size());
      case ProblemVariant::kPs: return ps.channel.cols();
      case ProblemVariant::kPm: return static_cast<std::int64_t>(pm.channel.size());
      case ProblemVariant::kPc: return pc.gain.rows();
    }
    throw std::logic_error("ue_count: unreachable");
  }

  void validate() const {
    switch (variant) {
      case ProblemVariant::kPb: {
        if (pb.gain.empty()) throw std::invalid_argument("instance: PB needs at least one user");
        for (double g : pb.gain)
          if (!(g >= 0.0)) throw std::invalid_argument("instance: PB gains must be nonnegative");
        if (!(pb.power_budget > 0.0)) throw std::invalid_argument("instance: power budget must be positive");
        if (!(pb.noise_density > 0.0)) throw std::invalid_argument("instance: noise density must be positive");
        if (!(pb.rate_floor > 0.0)) throw std::invalid_argument("instance: rate floor must be positive");
        break;
      }
      case ProblemVariant::kPs: {
        if (ps.channel.size() == 0) throw std::invalid_argument("instance: PS channel is empty");
        if (!(ps.power_budget > 0.0)) throw std::invalid_argument("instance: power budget must be positive");
        if (!(ps.noise_power > 0.0)) throw std::invalid_argument("instance: noise power must be positive");
        break;
      }
      case ProblemVariant::kPm: {
        if (pm.channel.empty()) throw std::invalid_argument("instance: PM needs at least one user");
        const auto rows = pm.channel.front().rows();
        const auto cols = pm.channel.front().cols();
        for (const auto& h : pm.channel)
          if (h.rows() != rows || h.cols() != cols)
            throw std::invalid_argument("instance: PM per-user channel shapes differ");
        if (pm.stream_count < 1 || pm.stream_count > rows)
          throw std::invalid_argument("instance: PM stream count must be in [1, ue_antennas]");
        if (!(pm.power_budget > 0.0)) throw std::invalid_argument("instance: power budget must be positive");
        if (!(pm.noise_power > 0.0)) throw std::invalid_argument("instance: noise power must be positive");
        break;
      }
      case ProblemVariant::kPc: {
        if (pc.gain.rows() == 0 || pc.gain.rows() != pc.gain.cols())
          throw std::invalid_argument("instance: PC gain matrix must be square and nonempty");
        for (Eigen::Index r = 0; r < pc.gain.rows(); ++r)
          for (Eigen::Index c = 0; c < pc.gain.cols(); ++c)
            if (!(pc.gain(r, c) >= 0.0))
              throw std::invalid_argument("instance: PC gains must be nonnegative");
        if (pc.has_decomposition) {
          if (pc.beams.cols() != pc.gain.rows() || pc.channel.cols() != pc.gain.rows() ||
              pc.beams.rows() != pc.channel.rows())
            throw std::invalid_argument("instance: PC decomposition shapes do not match gain matrix");
          for (Eigen::Index c = 0; c < pc.beams.cols(); ++c)
            if (std::abs(pc.beams.col(c).norm() - 1.0) > 1e-9)
              throw std::invalid_argument("instance: PC beam columns must have unit norm");
        }
        if (!(pc.power_budget > 0.0)) throw std::invalid_argument("instance: power budget must be positive");
        if (!(pc.noise_power > 0.0)) throw std::invalid_argument("instance: noise power must be positive");
        break;
      }
    }
  }
};

// ---------------------------------------------------------------------------
// Generation
// ---------------------------------------------------------------------------

inline double user_path_scale(const ChannelModel& model, std::int64_t user,
                              std::int64_t user_count) {
  if (model.distances_m.empty()) return 1.0;
  if (static_cast<std::int64_t>(model.distances_m.size()) != user_count)
    throw std::invalid_argument("generate_channels: one distance per user required");
  return std::sqrt(path_loss_linear(model.distances_m[static_cast<std::size_t>(user)]));
}

inline ProblemInstance generate_channels(ProblemVariant variant, const SizeSpec& sizes,
                                         const ChannelModel& model, std::uint64_t seed,
                                         const InstanceConstants& constants = {}) {
  if (sizes.ue_count <= 0 || sizes.bs_antennas <= 0 || sizes.ue_antennas <= 0 ||
      sizes.stream_count <= 0)
    throw std::invalid_argument("generate_channels: sizes must be positive");
  Rng rng(seed);
  ProblemInstance inst;
  inst.variant = variant;
  switch (variant) {
    case ProblemVariant::kPb: {
      inst.pb.noise_density = constants.noise_density;
      inst.pb.power_budget = constants.power_budget;
      inst.pb.rate_floor = constants.rate_floor;
      inst.pb.gain.resize(static_cast<std::size_t>(sizes.ue_count));
      for (std::int64_t k = 0; k < sizes.ue_count; ++k) {
        const auto draw = draw_channel_block(rng, 1, 1, model);
        const double amp = user_path_scale(model, k, sizes.ue_count);
        inst.pb.gain[static_cast<std::size_t>(k)] = std::norm(draw.channel(0, 0) * amp);
      }
      break;
    }
    case ProblemVariant::kPs: {
      inst.ps.noise_power = constants.noise_power;
      inst.ps.power_budget = constants.power_budget;
      inst.ps.channel.resize(sizes.bs_antennas, sizes.ue_count);
      for (std::int64_t k = 0; k < sizes.ue_count; ++k) {
        const auto draw = draw_channel_block(rng, sizes.bs_antennas, 1, model);
        inst.ps.channel.col(k) = draw.channel * user_path_scale(model, k, sizes.ue_count);
      }
      break;
    }
    case ProblemVariant::kPm: {
      if (sizes.stream_count > sizes.ue_antennas)
        throw std::invalid_argument("generate_channels: stream count cannot exceed ue antennas");
      inst.pm.noise_power = constants.noise_power;
      inst.pm.power_budget = constants.power_budget;
      inst.pm.stream_count = sizes.stream_count;
      inst.pm.channel.reserve(static_cast<std::size_t>(sizes.ue_count));
      for (std::int64_t k = 0; k < sizes.ue_count; ++k) {
        const auto draw = draw_channel_block(rng, sizes.ue_antennas, sizes.bs_antennas, model);
        inst.pm.channel.push_back(draw.channel * user_path_scale(model, k, sizes.ue_count));
      }
      break;
    }
    case ProblemVariant::kPc: {
      if (sizes.bs_antennas < sizes.ue_count)
        throw std::invalid_argument(
            "generate_channels: PC factorization needs bs_antennas >= ue_count");
      inst.pc.noise_power = constants.noise_power;
      inst.pc.power_budget = constants.power_budget;
      inst.pc.channel.resize(sizes.bs_antennas, sizes.ue_count);
      for (std::int64_t k = 0; k < sizes.ue_count; ++k) {
        const auto draw = draw_channel_block(rng, sizes.bs_antennas, 1, model);
        inst.pc.channel.col(k) = draw.channel * user_path_scale(model, k, sizes.ue_count);
      }
      inst.pc.beams.resize(sizes.bs_antennas, sizes.ue_count);
      for (std::int64_t k = 0; k < sizes.ue_count; ++k) {
        CVec b(sizes.bs_antennas);
        constexpr double kInvSqrt2 = 0.70710678118654752440;
        for (std::int64_t n = 0; n < sizes.bs_antennas; ++n) {
          const double re = rng.normal();
          const double im = rng.normal();
          b(n) = Cplx(re * kInvSqrt2, im * kInvSqrt2);
        }
        inst.pc.beams.col(k) = b / b.norm();
      }
      inst.pc.has_decomposition = true;
      // Eigen's dot conjugates its first argument, so beams.col(j).dot(h_k)
      // is exactly w_j^H h_k.
      inst.pc.gain.resize(sizes.ue_count, sizes.ue_count);
      for (std::int64_t k = 0; k < sizes.ue_count; ++k)
        for (std::int64_t j = 0; j < sizes.ue_count; ++j)
          inst.pc.gain(k, j) = std::abs(inst.pc.beams.col(j).dot(inst.pc.channel.col(k)));
      break;
    }
  }
  inst.validate();
  return inst;
}

// PC instance from an explicit gain matrix (no factorization attached).
inline ProblemInstance make_pc_instance(const Eigen::MatrixXd& gain, double noise_power,
                                        double power_budget) {
  ProblemInstance inst;
  inst.variant = ProblemVariant::kPc;
  inst.pc.gain = gain;
  inst.pc.noise_power = noise_power;
  inst.pc.power_budget = power_budget;
  inst.validate();
  return inst;
}

// ---------------------------------------------------------------------------
// Objectives
// ---------------------------------------------------------------------------

// Shannon rate B*log2(1 + p*g/(N0*B)); the B -> 0+ limit is 0.
inline double pb_user_rate(double p, double bandwidth, double gain, double noise_density) {
  if (bandwidth <= 0.0 || p <= 0.0 || gain <= 0.0) return 0.0;
  return bandwidth * std::log2(1.0 + p * gain / (noise_density * bandwidth));
}

// PB minimizes total bandwidth.
inline double objective_pb(const std::vector<double>& bandwidth) {
  double total = 0.0;
  for (double b : bandwidth) total += b;
  return total;
}

// Sum spectral efficiency of a MISO precoder, bits/s/Hz.
inline double se_ps(const PsData& data, const CMat& precoder) {
  const auto k_count = data.channel.cols();
  if (precoder.rows() != data.channel.rows() || precoder.cols() != k_count)
    throw std::invalid_argument("se_ps: precoder shape does not match channel");
  double se = 0.0;
  for (Eigen::Index k = 0; k < k_count; ++k) {
    double signal = 0.0;
    double interference = 0.0;
    for (Eigen::Index j = 0; j < k_count; ++j) {
      const double power = std::norm(data.channel.col(k).dot(precoder.col(j)));
      if (j == k)
        signal = power;
      else
        interference += power;
    }
    se += std::log2(1.0 + signal / (interference + data.noise_power));
  }
  return se;
}

namespace detail {
// log2 det of a Hermitian positive-definite matrix via Cholesky.
inline double log2_det_hpd(const CMat& m) {
  Eigen::LLT<CMat> llt(m);
  if (llt.info() != Eigen::Success)
    throw std::domain_error("log2_det_hpd: matrix is not positive definite");
  double log_det = 0.0;
  const CMat l = llt.matrixL();
  for (Eigen::Index i = 0; i < l.rows(); ++i) log_det += std::log2(std::real(l(i, i)));
  return 2.0 * log_det;
}
}  // namespace detail

// Sum spectral efficiency of a MIMO precoder set, log-det form.
inline double se_pm(const PmData& data, const std::vector<CMat>& precoders) {
  const auto k_count = static_cast<Eigen::Index>(data.channel.size());
  if (static_cast<Eigen::Index>(precoders.size()) != k_count)
    throw std::invalid_argument("se_pm: one precoder block per user required");
  const auto n_u = data.channel.front().rows();
  double se = 0.0;
  for (Eigen::Index k = 0; k < k_count; ++k) {
    const CMat& h_k = data.channel[static_cast<std::size_t>(k)];
    CMat noise = data.noise_power * CMat::Identity(n_u, n_u);
    for (Eigen::Index j = 0; j < k_count; ++j) {
      if (j == k) continue;
      const CMat cross = h_k * precoders[static_cast<std::size_t>(j)];
      noise += cross * cross.adjoint();
    }
    const CMat own = h_k * precoders[static_cast<std::size_t>(k)];
    se += detail::log2_det_hpd(noise + own * own.adjoint()) - detail::log2_det_hpd(noise);
  }
  return se;
}

// Sum rate of a power vector on the interference channel.
inline double se_pc(const PcData& data, const std::vector<double>& power) {
  const auto k_count = data.gain.rows();
  if (static_cast<Eigen::Index>(power.size()) != k_count)
    throw std::invalid_argument("se_pc: power vector length does not match gain matrix");
  double se = 0.0;
  for (Eigen::Index k = 0; k < k_count; ++k) {
    double interference = 0.0;
    for (Eigen::Index j = 0; j < k_count; ++j) {
      if (j == k) continue;
      interference += data.gain(k, j) * data.gain(k, j) * power[static_cast<std::size_t>(j)];
    }
    const double signal = data.gain(k, k) * data.gain(k, k) * power[static_cast<std::size_t>(k)];
    se += std::log2(1.0 + signal / (interference + data.noise_power));
  }
  return se;
}

// ---------------------------------------------------------------------------
// Instance serialization (versioned structured text, base64 payloads)
// ---------------------------------------------------------------------------
//
// Format:
//   pekit-instance v1
//   variant <PB|PS|PM|PC>
//   <integer size fields, one per line, "name value">
//   <scalar constant fields, one per line, "name value" with %.17g>
//   <payload fields, one per line, "name <base64 of little-endian doubles>">
//   end
// Complex matrices are serialized row-major with interleaved re/im.

namespace detail {

inline std::vector<double> cmat_to_doubles(const CMat& m) {
  std::vector<double> out;
  out.reserve(static_cast<std::size_t>(m.size()) * 2);
  for (Eigen::Index r = 0; r < m.rows(); ++r)
    for (Eigen::Index c = 0; c < m.cols(); ++c) {
      out.push_back(std::real(m(r, c)));
      out.push_back(std::imag(m(r, c)));
    }
  return out;
}

inline CMat cmat_from_doubles(const std::vector<double>& v, Eigen::Index rows,
                              Eigen::Index cols) {
  if (static_cast<Eigen::Index>(v.size()) != rows * cols * 2)
    throw std::invalid_argument("instance payload has wrong element count");
  CMat m(rows, cols);
  std::size_t i = 0;
  for (Eigen::Index r = 0; r < rows; ++r)
    for (Eigen::Index c = 0; c < cols; ++c) {
      m(r, c) = Cplx(v[i], v[i + 1]);
      i += 2;
    }
  return m;
}

inline std::string format_double(double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

}  // namespace detail

inline std::string write_instance(const ProblemInstance& inst) {
  inst.validate();
  std::ostringstream out;
  out << "pekit-instance v1\n";
  out << "variant " << variant_name(inst.variant) << "\n";
  switch (inst.variant) {
    case ProblemVariant::kPb: {
      out << "ue_count " << inst.pb.gain.size() << "\n";
      out << "noise_density " << detail::format_double(inst.pb.noise_density) << "\n";
      out << "power_budget " << detail::format_double(inst.pb.power_budget) << "\n";
      out << "rate_floor " << detail::format_double(inst.pb.rate_floor) << "\n";
      out << "gain " << doubles_to_base64(inst.pb.gain) << "\n";
      break;
    }
    case ProblemVariant::kPs: {
      out << "bs_antennas " << inst.ps.channel.rows() << "\n";
      out << "ue_count " << inst.ps.channel.cols() << "\n";
      out << "noise_power " << detail::format_double(inst.ps.noise_power) << "\n";
      out << "power_budget " << detail::format_double(inst.ps.power_budget) << "\n";
      out << "channel " << doubles_to_base64(detail::cmat_to_doubles(inst.ps.channel)) << "\n";
      break;
    }
    case ProblemVariant::kPm: {
      out << "ue_count " << inst.pm.channel.size() << "\n";
      out << "ue_antennas " << inst.pm.channel.front().rows() << "\n";
      out << "bs_antennas " << inst.pm.channel.front().cols() << "\n";
      out << "stream_count " << inst.pm.stream_count << "\n";
      out << "noise_power " << detail::format_double(inst.pm.noise_power) << "\n";
      out << "power_budget " << detail::format_double(inst.pm.power_budget) << "\n";
      for (const auto& h : inst.pm.channel)
        out << "channel " << doubles_to_base64(detail::cmat_to_doubles(h)) << "\n";
      break;
    }
    case ProblemVariant::kPc: {
      out << "ue_count " << inst.pc.gain.rows() << "\n";
      out << "has_decomposition " << (inst.pc.has_decomposition ? 1 : 0) << "\n";
      if (inst.pc.has_decomposition) out << "bs_antennas " << inst.pc.beams.rows() << "\n";
      out << "noise_power " << detail::format_double(inst.pc.noise_power) << "\n";
      out << "power_budget " << detail::format_double(inst.pc.power_budget) << "\n";
      std::vector<double> g(inst.pc.gain.data(),
                            inst.pc.gain.data() + inst.pc.gain.size());
      // Eigen stores column-major; write row-major for a layout-independent file.
      std::vector<double> row_major;
      row_major.reserve(g.size());
      for (Eigen::Index r = 0; r < inst.pc.gain.rows(); ++r)
        for (Eigen::Index c = 0; c < inst.pc.gain.cols(); ++c)
          row_major.push_back(inst.pc.gain(r, c));
      out << "gain " << doubles_to_base64(row_major) << "\n";
      if (inst.pc.has_decomposition) {
        out << "beams " << doubles_to_base64(detail::cmat_to_doubles(inst.pc.beams)) << "\n";
        out << "channel " << doubles_to_base64(detail::cmat_to_doubles(inst.pc.channel)) << "\n";
      }
      break;
    }
  }
  out << "end\n";
  return out.str();
}

inline ProblemInstance read_instance(const std::string& text) {
  std::istringstream in(text);
  std::string line;
  auto next_line = [&]() {
    if (!std::getline(in, line)) throw std::invalid_argument("instance text: unexpected end");
    return line;
  };
  if (next_line() != "pekit-instance v1")
    throw std::invalid_argument("instance text: bad header (expected 'pekit-instance v1')");
  auto read_field = [&](const std::string& key) {
    next_line();
    const auto space = line.find(' ');
    if (space == std::string::npos || line.substr(0, space) != key)
      throw std::invalid_argument("instance text: expected field '" + key + "', got '" + line + "'");
    return line.substr(space + 1);
  };
  ProblemInstance inst;
  inst.variant = variant_from_name(read_field("variant"));
  switch (inst.variant) {
    case ProblemVariant::kPb: {
      const auto k = std::stoll(read_field("ue_count"));
      inst.pb.noise_density = std::stod(read_field("noise_density"));
      inst.pb.power_budget = std::stod(read_field("power_budget"));
      inst.pb.rate_floor = std::stod(read_field("rate_floor"));
      inst.pb.gain = doubles_from_base64(read_field("gain"));
      if (static_cast<std::int64_t>(inst.pb.gain.size()) != k)
        throw std::invalid_argument("instance text: gain payload size mismatch");
      break;
    }
    case ProblemVariant::kPs: {
      const auto n_b = std::stoll(read_field("bs_antennas"));
      const auto k = std::stoll(read_field("ue_count"));
      inst.ps.noise_power = std::stod(read_field("noise_power"));
      inst.ps.power_budget = std::stod(read_field("power_budget"));
      inst.ps.channel = detail::cmat_from_doubles(doubles_from_base64(read_field("channel")),
                                                  n_b, k);
      break;
    }
    case ProblemVariant::kPm: {
      const auto k = std::stoll(read_field("ue_count"));
      const auto n_u = std::stoll(read_field("ue_antennas"));
      const auto n_b = std::stoll(read_field("bs_antennas"));
      inst.pm.stream_count = std::stoll(read_field("stream_count"));
      inst.pm.noise_power = std::stod(read_field("noise_power"));
      inst.pm.power_budget = std::stod(read_field("power_budget"));
      for (std::int64_t i = 0; i < k; ++i)
        inst.pm.channel.push_back(
            detail::cmat_from_doubles(doubles_from_base64(read_field("channel")), n_u, n_b));
      break;
    }
    case ProblemVariant::kPc: {
      const auto k = std::stoll(read_field("ue_count"));
      const bool factored = std::stoll(read_field("has_decomposition")) != 0;
      std::int64_t n_b = 0;
      if (factored) n_b = std::stoll(read_field("bs_antennas"));
      inst.pc.noise_power = std::stod(read_field("noise_power"));
      inst.pc.power_budget = std::stod(read_field("power_budget"));
      const auto g = doubles_from_base64(read_field("gain"));
      if (static_cast<std::int64_t>(g.size()) != k * k)
        throw std::invalid_argument("instance text: gain payload size mismatch");
      inst.pc.gain.resize(k, k);
      for (std::int64_t r = 0; r < k; ++r)
        for (std::int64_t c = 0; c < k; ++c)
          inst.pc.gain(r, c) = g[static_cast<std::size_t>(r * k + c)];
      inst.pc.has_decomposition = factored;
      if (factored) {
        inst.pc.beams = detail::cmat_from_doubles(doubles_from_base64(read_field("beams")), n_b, k);
        inst.pc.channel =
            detail::cmat_from_doubles(doubles_from_base64(read_field("channel")), n_b, k);
      }
      break;
    }
  }
  if (next_line() != "end") throw std::invalid_argument("instance text: missing 'end' terminator");
  inst.validate();
  return inst;
}

}  // namespace pekit
