#pragma once

// Experiment runner behind the command-line tool.  Each subcommand reads a
// sectioned config file, runs one of the library's workflows, and writes its
// artifacts into an output directory:
//
//   solve                per-instance baseline runs               solve.csv
//   verify-rie           raw vs re-expressed sweep comparison     equivalence.csv
//   check-equivariance   permutation-symmetry suite + controls    equivariance.csv
//   train                unsupervised precoder training           loss.csv, model.json
//   eval-generalization  SE ratio of a checkpoint across sizes    se_ratio.csv
//   count-flops          analytic per-sample cost sweeps          flops.csv
//
// Every run echoes its fully resolved configuration (defaults and overrides
// applied) next to the artifacts, so the directory documents exactly what
// produced it and `resolved.ini` can be replayed as an input config.  All
// writes are temp-then-rename; identical config and seed reproduce artifacts
// byte for byte.
//
// Exit codes: 0 success; 1 configuration or input validation failure; 2 a
// verification subcommand ran but its check failed (equivalence above
// tolerance, symmetry broken, training diverged).

#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <ostream>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

#include "pekit/channels.hpp"
#include "pekit/config.hpp"
#include "pekit/csv.hpp"
#include "pekit/gnn/checkpoint.hpp"
#include "pekit/gnn/flops.hpp"
#include "pekit/gnn/model.hpp"
#include "pekit/gnn/train.hpp"
#include "pekit/io.hpp"
#include "pekit/permutation.hpp"
#include "pekit/rie/verify.hpp"
#include "pekit/version.hpp"

namespace pekit {

struct RunOptions {
  std::string config_path;
  std::string out_dir;
  std::optional<std::uint64_t> seed;    // overrides [run] seed
  std::optional<std::int64_t> trials;   // overrides the subcommand's trial count
};

namespace experiment_detail {

// ---------------------------------------------------------------------------
// Shared plumbing
// ---------------------------------------------------------------------------

inline std::uint64_t resolve_seed(const ConfigReader& reader, const RunOptions& options) {
  if (options.seed) {
    reader.raw("run", "seed");  // consume a config seed the flag overrides
    return *options.seed;
  }
  if (!reader.has("run", "seed")) {
    throw ConfigError(
        "no seed given: set [run] seed or pass --seed (runs must be reproducible)");
  }
  return reader.get_uint("run", "seed");
}

inline std::filesystem::path resolve_out_dir(const RunOptions& options) {
  if (options.out_dir.empty()) {
    throw ConfigError("no output directory given: pass --out <dir>");
  }
  std::filesystem::path dir(options.out_dir);
  std::filesystem::create_directories(dir);
  return dir;
}

inline void set_kv(ConfigData& data, const std::string& section, const std::string& key,
                   const std::string& value) {
  data.sections[section][key] = value;
}

inline void set_kv(ConfigData& data, const std::string& section, const std::string& key,
                   std::int64_t value) {
  set_kv(data, section, key, std::to_string(value));
}

inline void set_kv(ConfigData& data, const std::string& section, const std::string& key,
                   std::uint64_t value) {
  set_kv(data, section, key, std::to_string(value));
}

inline void set_kv(ConfigData& data, const std::string& section, const std::string& key,
                   double value) {
  set_kv(data, section, key, csv_double(value));
}

inline void write_run_stamp(const std::filesystem::path& dir, const ConfigData& resolved) {
  atomic_write_file(dir / "resolved.ini", config_to_string(resolved));
  atomic_write_file(dir / "version.txt", std::string(kVersion) + "\n");
}

// ---------------------------------------------------------------------------
// Section parsers shared between subcommands
// ---------------------------------------------------------------------------

struct ModelSection {
  GnnWidths widths;
  std::int64_t layers = 3;
  GnnBuildOptions build;
  std::string attention = "automatic";
};

inline ModelSection read_model_section(const ConfigReader& reader) {
  ModelSection m;
  m.widths.input = 2;  // channel entries arrive as (real, imaginary) pairs
  m.widths.hidden = reader.get_int_or("model", "hidden", 64);
  m.widths.ffn_hidden = reader.get_int_or("model", "ffn_hidden", 128);
  m.layers = reader.get_int_or("model", "layers", 3);
  m.attention = reader.get_string_or("model", "attention", "automatic");
  if (m.attention == "automatic") {
    m.build.placement = AttentionPlacement::automatic;
  } else if (m.attention == "none") {
    m.build.placement = AttentionPlacement::none;
  } else if (m.attention == "forced") {
    m.build.placement = AttentionPlacement::forced;
  } else {
    throw ConfigError("[model] attention: expected automatic, none, or forced, got '" +
                      m.attention + "'");
  }
  m.build.forced_set = static_cast<std::size_t>(reader.get_int_or("model", "forced_set", 0));
  if (m.widths.hidden <= 0 || m.widths.ffn_hidden <= 0 || m.layers <= 0) {
    throw ConfigError("[model] hidden, ffn_hidden, and layers must be positive");
  }
  return m;
}

inline void echo_model_section(ConfigData& resolved, const ModelSection& m) {
  set_kv(resolved, "model", "hidden", m.widths.hidden);
  set_kv(resolved, "model", "ffn_hidden", m.widths.ffn_hidden);
  set_kv(resolved, "model", "layers", m.layers);
  set_kv(resolved, "model", "attention", m.attention);
  set_kv(resolved, "model", "forced_set", static_cast<std::int64_t>(m.build.forced_set));
}

inline gnn::TrainConfig read_train_section(const ConfigReader& reader, std::uint64_t seed) {
  gnn::TrainConfig cfg;
  cfg.seed = seed;
  cfg.sample_count = reader.get_int_or("train", "samples", cfg.sample_count);
  cfg.batch_size = reader.get_int_or("train", "batch_size", cfg.batch_size);
  cfg.epochs = reader.get_int_or("train", "epochs", cfg.epochs);
  cfg.learning_rate = reader.get_double_or("train", "learning_rate", cfg.learning_rate);
  cfg.lr_decay = reader.get_double_or("train", "lr_decay", cfg.lr_decay);
  cfg.bs_antennas = reader.get_int_or("train", "bs_antennas", cfg.bs_antennas);
  cfg.fixed_users = reader.get_int_or("train", "fixed_users", cfg.fixed_users);
  cfg.max_users = reader.get_int_or("train", "max_users", cfg.max_users);
  cfg.power_budget = reader.get_watts_or("train", "power_budget", cfg.power_budget);
  cfg.noise_power = reader.get_watts_or("train", "noise_power", cfg.noise_power);
  try {
    gnn::validate_train_config(cfg);
  } catch (const std::invalid_argument& e) {
    throw ConfigError(std::string("[train] ") + e.what());
  }
  return cfg;
}

inline void echo_train_section(ConfigData& resolved, const gnn::TrainConfig& cfg) {
  set_kv(resolved, "train", "samples", cfg.sample_count);
  set_kv(resolved, "train", "batch_size", cfg.batch_size);
  set_kv(resolved, "train", "epochs", cfg.epochs);
  set_kv(resolved, "train", "learning_rate", cfg.learning_rate);
  set_kv(resolved, "train", "lr_decay", cfg.lr_decay);
  set_kv(resolved, "train", "bs_antennas", cfg.bs_antennas);
  set_kv(resolved, "train", "fixed_users", cfg.fixed_users);
  set_kv(resolved, "train", "max_users", cfg.max_users);
  set_kv(resolved, "train", "power_budget_watts", cfg.power_budget);
  set_kv(resolved, "train", "noise_power_watts", cfg.noise_power);
}

// ---------------------------------------------------------------------------
// solve
// ---------------------------------------------------------------------------

inline int cmd_solve(const ConfigReader& reader, const RunOptions& options,
                     std::ostream& out) {
  const std::uint64_t seed = resolve_seed(reader, options);
  const auto dir = resolve_out_dir(options);
  const std::int64_t trials =
      options.trials ? *options.trials : reader.get_int_or("run", "trials", 10);
  if (options.trials) reader.raw("run", "trials");
  if (trials <= 0) throw ConfigError("[run] trials must be positive");

  const ProblemVariant variant = variant_from_name(reader.get_string("problem", "variant"));

  SizeSpec sizes;
  sizes.ue_count = reader.get_int_or("problem", "users", 2);
  sizes.bs_antennas = reader.get_int_or("problem", "bs_antennas", 4);
  sizes.ue_antennas = reader.get_int_or("problem", "ue_antennas", 1);
  sizes.stream_count = reader.get_int_or("problem", "streams", 1);
  if (sizes.ue_count <= 0 || sizes.bs_antennas <= 0 || sizes.ue_antennas <= 0 ||
      sizes.stream_count <= 0) {
    throw ConfigError("[problem] sizes must be positive");
  }

  InstanceConstants constants;
  constants.power_budget = reader.get_watts_or("problem", "power_budget", 1.0);
  constants.noise_power = reader.get_watts_or("problem", "noise_power", 1.0);
  constants.noise_density = reader.get_watts_or("problem", "noise_density", 1.0);
  constants.rate_floor = reader.get_double_or("problem", "rate_floor", 1.0);

  const std::string channel_kind = reader.get_string_or("problem", "channel", "rayleigh");
  ChannelModel channel = ChannelModel::rayleigh();
  double rician_factor = 10.0;
  std::optional<double> distance;
  if (channel_kind == "rician") {
    rician_factor = reader.get_double_or("problem", "rician_factor", 10.0);
    if (reader.has("problem", "distance_m")) {
      distance = reader.get_double("problem", "distance_m");
    }
    std::vector<double> distances;
    if (distance) {
      distances.assign(static_cast<std::size_t>(sizes.ue_count), *distance);
    }
    channel = ChannelModel::rician(rician_factor, std::move(distances));
  } else if (channel_kind != "rayleigh") {
    throw ConfigError("[problem] channel: expected rayleigh or rician, got '" +
                      channel_kind + "'");
  }

  // Per-variant solver knobs; cross-variant strays fail the unknown-key check.
  GdPbConfig pb_cfg;
  WmmsePsConfig ps_cfg;
  WmmsePmConfig pm_cfg;
  WmmsePcConfig pc_cfg;
  switch (variant) {
    case ProblemVariant::kPb: {
      pb_cfg.max_iterations = reader.get_int_or("solver", "max_iterations", 20000);
      pb_cfg.tolerance = reader.get_double_or("solver", "tolerance", pb_cfg.tolerance);
      pb_cfg.step_size = reader.get_double_or("solver", "step_size", pb_cfg.step_size);
      pb_cfg.step_decay = reader.get_double_or("solver", "step_decay", pb_cfg.step_decay);
      const std::string rule = reader.get_string_or("solver", "update_rule", "gradient");
      if (rule == "gradient") pb_cfg.rule = GdPbRule::kGradient;
      else if (rule == "alternate") pb_cfg.rule = GdPbRule::kAlternate;
      else throw ConfigError("[solver] update_rule: expected gradient or alternate");
      break;
    }
    case ProblemVariant::kPs:
      ps_cfg.max_iterations = reader.get_int_or("solver", "max_iterations", 200);
      ps_cfg.tolerance = reader.get_double_or("solver", "tolerance", ps_cfg.tolerance);
      break;
    case ProblemVariant::kPm: {
      pm_cfg.max_iterations = reader.get_int_or("solver", "max_iterations", 50);
      pm_cfg.tolerance = reader.get_double_or("solver", "tolerance", pm_cfg.tolerance);
      const std::string coupling = reader.get_string_or("solver", "coupling", "own-channel");
      if (coupling == "own-channel") pm_cfg.coupling = PmCoupling::kOwnChannel;
      else if (coupling == "cross-channel") pm_cfg.coupling = PmCoupling::kCrossChannel;
      else throw ConfigError("[solver] coupling: expected own-channel or cross-channel");
      break;
    }
    case ProblemVariant::kPc:
      pc_cfg.max_iterations = reader.get_int_or("solver", "max_iterations", 500);
      pc_cfg.tolerance = reader.get_double_or("solver", "tolerance", pc_cfg.tolerance);
      break;
  }
  reader.reject_unknown();

  ConfigData resolved;
  set_kv(resolved, "run", "seed", seed);
  set_kv(resolved, "run", "trials", trials);
  set_kv(resolved, "problem", "variant", std::string(variant_name(variant)));
  set_kv(resolved, "problem", "users", sizes.ue_count);
  set_kv(resolved, "problem", "bs_antennas", sizes.bs_antennas);
  set_kv(resolved, "problem", "ue_antennas", sizes.ue_antennas);
  set_kv(resolved, "problem", "streams", sizes.stream_count);
  set_kv(resolved, "problem", "power_budget_watts", constants.power_budget);
  set_kv(resolved, "problem", "noise_power_watts", constants.noise_power);
  set_kv(resolved, "problem", "noise_density_watts", constants.noise_density);
  set_kv(resolved, "problem", "rate_floor", constants.rate_floor);
  set_kv(resolved, "problem", "channel", channel_kind);
  if (channel_kind == "rician") {
    set_kv(resolved, "problem", "rician_factor", rician_factor);
    if (distance) set_kv(resolved, "problem", "distance_m", *distance);
  }
  switch (variant) {
    case ProblemVariant::kPb:
      set_kv(resolved, "solver", "max_iterations", pb_cfg.max_iterations);
      set_kv(resolved, "solver", "tolerance", pb_cfg.tolerance);
      set_kv(resolved, "solver", "step_size", pb_cfg.step_size);
      set_kv(resolved, "solver", "step_decay", pb_cfg.step_decay);
      set_kv(resolved, "solver", "update_rule", std::string(gd_pb_rule_name(pb_cfg.rule)));
      break;
    case ProblemVariant::kPs:
      set_kv(resolved, "solver", "max_iterations", ps_cfg.max_iterations);
      set_kv(resolved, "solver", "tolerance", ps_cfg.tolerance);
      break;
    case ProblemVariant::kPm:
      set_kv(resolved, "solver", "max_iterations", pm_cfg.max_iterations);
      set_kv(resolved, "solver", "tolerance", pm_cfg.tolerance);
      set_kv(resolved, "solver", "coupling", std::string(pm_coupling_name(pm_cfg.coupling)));
      break;
    case ProblemVariant::kPc:
      set_kv(resolved, "solver", "max_iterations", pc_cfg.max_iterations);
      set_kv(resolved, "solver", "tolerance", pc_cfg.tolerance);
      break;
  }
  write_run_stamp(dir, resolved);

  CsvTable table({"trial", "users", "iterations", "converged", "objective"});
  for (std::int64_t t = 0; t < trials; ++t) {
    const std::uint64_t trial_seed = seed + static_cast<std::uint64_t>(t);
    ProblemInstance inst = generate_channels(variant, sizes, channel, trial_seed, constants);
    std::int64_t iterations = 0;
    bool converged = false;
    double objective = 0.0;
    switch (variant) {
      case ProblemVariant::kPb: {
        const auto r = gd_pb_solve(inst.pb, pb_cfg);
        iterations = r.iterations;
        converged = r.converged;
        for (double b : r.state.bandwidth) objective += b;
        break;
      }
      case ProblemVariant::kPs: {
        const auto r = wmmse_ps_solve(inst.ps, ps_cfg);
        iterations = r.iterations;
        converged = r.converged;
        objective = se_ps(inst.ps, r.state.precoder);
        break;
      }
      case ProblemVariant::kPm: {
        const auto r = wmmse_pm_solve(inst.pm, pm_cfg);
        iterations = r.iterations;
        converged = r.converged;
        objective = r.se_trace.empty() ? 0.0 : r.se_trace.back();
        break;
      }
      case ProblemVariant::kPc: {
        const auto r = wmmse_pc_solve(inst.pc, pc_cfg);
        iterations = r.iterations;
        converged = r.converged;
        objective = se_pc(inst.pc, wmmse_pc_power(r.state));
        break;
      }
    }
    table.begin_row().cell(t).cell(sizes.ue_count).cell(iterations).cell(converged).cell(
        objective);
  }
  table.write(dir / "solve.csv");
  out << "solve " << variant_name(variant) << ": " << trials << " instances -> "
      << (dir / "solve.csv").string() << "\n";
  return 0;
}

// ---------------------------------------------------------------------------
// verify-rie
// ---------------------------------------------------------------------------

inline int cmd_verify_rie(const ConfigReader& reader, const RunOptions& options,
                          std::ostream& out) {
  const std::uint64_t seed = resolve_seed(reader, options);
  const auto dir = resolve_out_dir(options);
  const std::int64_t trials =
      options.trials ? *options.trials : reader.get_int_or("run", "trials", 100);
  if (options.trials) reader.raw("run", "trials");
  if (trials <= 0) throw ConfigError("[run] trials must be positive");

  const ProblemVariant variant = variant_from_name(reader.get_string("verify", "variant"));
  const std::int64_t iterations = reader.get_int_or("verify", "iterations", 20);
  const double tolerance = reader.get_double_or("verify", "tolerance", 1e-9);
  if (iterations <= 0) throw ConfigError("[verify] iterations must be positive");
  if (!(tolerance > 0.0)) throw ConfigError("[verify] tolerance must be positive");

  RieVerifyOptions verify_options;
  const std::string rule = reader.get_string_or("verify", "pb_update_rule", "gradient");
  if (rule == "gradient") verify_options.pb_rule = GdPbRule::kGradient;
  else if (rule == "alternate") verify_options.pb_rule = GdPbRule::kAlternate;
  else throw ConfigError("[verify] pb_update_rule: expected gradient or alternate");
  verify_options.pb_step_size =
      reader.get_double_or("verify", "pb_step_size", verify_options.pb_step_size);
  const std::string coupling = reader.get_string_or("verify", "pm_coupling", "own-channel");
  if (coupling == "own-channel") verify_options.pm_coupling = PmCoupling::kOwnChannel;
  else if (coupling == "cross-channel") verify_options.pm_coupling = PmCoupling::kCrossChannel;
  else throw ConfigError("[verify] pm_coupling: expected own-channel or cross-channel");
  verify_options.pm_channel_scale =
      reader.get_double_or("verify", "pm_channel_scale", verify_options.pm_channel_scale);
  reader.reject_unknown();

  ConfigData resolved;
  set_kv(resolved, "run", "seed", seed);
  set_kv(resolved, "run", "trials", trials);
  set_kv(resolved, "verify", "variant", std::string(variant_name(variant)));
  set_kv(resolved, "verify", "iterations", iterations);
  set_kv(resolved, "verify", "tolerance", tolerance);
  set_kv(resolved, "verify", "pb_update_rule",
         std::string(gd_pb_rule_name(verify_options.pb_rule)));
  set_kv(resolved, "verify", "pb_step_size", verify_options.pb_step_size);
  set_kv(resolved, "verify", "pm_coupling",
         std::string(pm_coupling_name(verify_options.pm_coupling)));
  set_kv(resolved, "verify", "pm_channel_scale", verify_options.pm_channel_scale);
  write_run_stamp(dir, resolved);

  const RieEquivalenceReport report =
      verify_rie_equivalence(variant, trials, iterations, tolerance, seed, verify_options);

  CsvTable table({"trial", "iteration", "max_abs_error"});
  for (const auto& row : report.rows) {
    table.begin_row().cell(row.trial).cell(row.iteration).cell(row.max_abs_error);
  }
  table.begin_row().cell("summary").cell(report.iterations).cell(report.worst_error);
  table.write(dir / "equivalence.csv");

  out << "verify-rie " << variant_name(variant) << ": worst |raw - re-expressed| = "
      << csv_double(report.worst_error) << " over " << trials << " trials x " << iterations
      << " sweeps (tolerance " << csv_double(tolerance) << ") -> "
      << (report.pass ? "pass" : "FAIL") << "\n";
  return report.pass ? 0 : 2;
}

// ---------------------------------------------------------------------------
// check-equivariance
// ---------------------------------------------------------------------------

// Sorting along the set axis is the canonical symmetry breaker: the sorted
// output ignores the input order entirely, so a permuted input cannot produce
// a correspondingly permuted output.
inline Tensor sort_along_set_axis(const Tensor& x) {
  const std::int64_t b = x.dim(0), k = x.dim(1), f = x.dim(2);
  Tensor out(x.shape());
  double* po = out.mutable_data();
  const double* pi = x.data();
  std::vector<double> column(static_cast<std::size_t>(k));
  for (std::int64_t s = 0; s < b; ++s) {
    for (std::int64_t j = 0; j < f; ++j) {
      for (std::int64_t t = 0; t < k; ++t) {
        column[static_cast<std::size_t>(t)] = pi[(s * k + t) * f + j];
      }
      std::sort(column.begin(), column.end());
      for (std::int64_t t = 0; t < k; ++t) {
        po[(s * k + t) * f + j] = column[static_cast<std::size_t>(t)];
      }
    }
  }
  return out;
}

inline int cmd_check_equivariance(const ConfigReader& reader, const RunOptions& options,
                                  std::ostream& out) {
  const std::uint64_t seed = resolve_seed(reader, options);
  const auto dir = resolve_out_dir(options);
  const std::int64_t trials =
      options.trials ? *options.trials : reader.get_int_or("run", "trials", 50);
  if (options.trials) reader.raw("run", "trials");
  if (trials <= 0) throw ConfigError("[run] trials must be positive");
  const double tolerance = reader.get_double_or("check", "tolerance", 1e-9);
  if (!(tolerance > 0.0)) throw ConfigError("[check] tolerance must be positive");
  reader.reject_unknown();

  ConfigData resolved;
  set_kv(resolved, "run", "seed", seed);
  set_kv(resolved, "run", "trials", trials);
  set_kv(resolved, "check", "tolerance", tolerance);
  write_run_stamp(dir, resolved);

  struct Entry {
    std::string target;
    bool expect_pass = true;
    std::function<EquivarianceReport(std::int64_t, double, Rng&)> run;
  };
  std::vector<Entry> suite;
  Rng setup(seed);

  // Layer-level templates: plain and attention processors on a normal set,
  // then on a nested set.
  {
    const std::int64_t f = 3, fh = 5, k = 4;
    auto rand_mat = [&setup](Shape shape) {
      Tensor t(shape);
      double* p = t.mutable_data();
      for (std::int64_t i = 0; i < t.size(); ++i) p[i] = 2.0 * setup.uniform() - 1.0;
      return t;
    };
    const Tensor v = rand_mat({f, f});
    const Tensor u = rand_mat({f, f});
    AttentionParams ap;
    ap.wq = rand_mat({f, f});
    ap.wk = rand_mat({f, f});
    ap.wv = rand_mat({f, f});
    ap.ffn_w1 = rand_mat({f, fh});
    ap.ffn_b1 = rand_mat({fh});
    ap.ffn_w2 = rand_mat({fh, f});
    ap.ffn_b2 = rand_mat({f});
    const Tensor us = rand_mat({f, f});
    const Tensor uc = rand_mat({f, f});
    const Tensor wc = rand_mat({f, f});

    PermutationScheme one_set;
    one_set.axes = {AxisPerm::fixed_axis(), AxisPerm::arbitrary(0, k),
                    AxisPerm::fixed_axis()};
    PermutationScheme nested;
    nested.axes = {AxisPerm::fixed_axis(), AxisPerm::nested(0, 1, 2, 2),
                   AxisPerm::fixed_axis()};

    suite.push_back({"template-one-set-ordinary", true,
                     [=](std::int64_t n, double tol, Rng& rng) {
                       return check_equivariance(
                           [&](const Tensor& x) {
                             return gcn_update(x, v, u, ActivationKind::rectifier, 1);
                           },
                           one_set, one_set, uniform_sampler({2, k, f}), n, tol, rng);
                     }});
    suite.push_back({"template-one-set-attention", true,
                     [=](std::int64_t n, double tol, Rng& rng) {
                       return check_equivariance(
                           [&](const Tensor& x) { return attention_update(x, ap); },
                           one_set, one_set, uniform_sampler({2, k, f}), n, tol, rng);
                     }});
    suite.push_back({"template-nested-ordinary", true,
                     [=](std::int64_t n, double tol, Rng& rng) {
                       return check_equivariance(
                           [&](const Tensor& x) {
                             return nested_gcn_update(x, 1, 2, 2, v, us, uc,
                                                      ActivationKind::rectifier);
                           },
                           nested, nested, uniform_sampler({2, k, f}), n, tol, rng);
                     }});
    suite.push_back({"template-nested-attention", true,
                     [=](std::int64_t n, double tol, Rng& rng) {
                       return check_equivariance(
                           [&](const Tensor& x) {
                             return nested_attention_update(x, 2, 2, ap, wc);
                           },
                           nested, nested, uniform_sampler({2, k, f}), n, tol, rng);
                     }});
    suite.push_back({"negative-control-sort", false,
                     [=](std::int64_t n, double tol, Rng& rng) {
                       return check_equivariance(&sort_along_set_axis, one_set, one_set,
                                                 uniform_sampler({2, k, f}), n, tol, rng);
                     }});
  }

  // Re-expressed solver sweeps under their layouts' schemes.
  {
    PermutationScheme pb_scheme;
    pb_scheme.axes = {AxisPerm::fixed_axis(), AxisPerm::arbitrary(0, 4)};
    suite.push_back(
        {"step-bandwidth-power", true, [](std::int64_t n, double tol, Rng& rng) {
           return check_equivariance(
               [](const Tensor& x) {
                 return rie_pb_step(x, 1.0, 1.0, 1.0, 1e-2, GdPbRule::kGradient);
               },
               [] {
                 PermutationScheme s;
                 s.axes = {AxisPerm::fixed_axis(), AxisPerm::arbitrary(0, 4)};
                 return s;
               }(),
               [] {
                 PermutationScheme s;
                 s.axes = {AxisPerm::fixed_axis(), AxisPerm::arbitrary(0, 4)};
                 return s;
               }(),
               uniform_sampler({kPbSlotCount, 4}, 0.1, 1.5), n, tol, rng);
         }});
  }
  {
    SizeSpec sizes;
    sizes.ue_count = 3;
    sizes.bs_antennas = 4;
    suite.push_back({"step-beamforming", true, [sizes](std::int64_t n, double tol, Rng& rng) {
                       PermutationScheme s;
                       s.axes = {AxisPerm::fixed_axis(),
                                 AxisPerm::arbitrary(0, sizes.bs_antennas),
                                 AxisPerm::arbitrary(1, sizes.ue_count)};
                       std::uint64_t instance_seed = 52000;
                       return check_equivariance(
                           [](const Tensor& x) { return rie_ps_step(x, 1.0, 1.0); }, s, s,
                           [&](Rng&) {
                             const auto inst =
                                 generate_channels(ProblemVariant::kPs, sizes,
                                                   ChannelModel::rayleigh(), instance_seed++);
                             return pack_ps(inst.ps, wmmse_ps_initial_state(inst.ps));
                           },
                           n, tol, rng);
                     }});
  }
  {
    SizeSpec sizes;
    sizes.ue_count = 2;
    sizes.bs_antennas = 3;
    sizes.ue_antennas = 2;
    sizes.stream_count = 2;
    suite.push_back(
        {"step-multi-antenna", true, [sizes](std::int64_t n, double tol, Rng& rng) {
           PermutationScheme s;
           s.axes = {AxisPerm::fixed_axis(), AxisPerm::arbitrary(0, sizes.bs_antennas),
                     AxisPerm::nested(1, 2, sizes.ue_count, sizes.ue_antennas),
                     AxisPerm::nested(1, 3, sizes.ue_count, sizes.stream_count)};
           std::uint64_t instance_seed = 53000;
           return check_equivariance(
               [&](const Tensor& x) {
                 return rie_pm_step(x, PmCoupling::kOwnChannel, sizes.ue_antennas,
                                    sizes.stream_count);
               },
               s, s,
               [&](Rng&) {
                 auto inst = generate_channels(ProblemVariant::kPm, sizes,
                                               ChannelModel::rayleigh(), instance_seed++);
                 for (auto& h : inst.pm.channel) h *= 0.1;
                 return pack_pm(inst.pm, wmmse_pm_initial_state(inst.pm));
               },
               n, tol, rng);
         }});
  }
  {
    SizeSpec sizes;
    sizes.ue_count = 4;
    sizes.bs_antennas = 4;
    auto pc_sample = [sizes](std::uint64_t base) {
      return [sizes, seed = base](Rng&) mutable {
        const auto inst =
            generate_channels(ProblemVariant::kPc, sizes, ChannelModel::rayleigh(), seed++);
        return pack_pc(inst.pc, wmmse_pc_initial_state(inst.pc));
      };
    };
    suite.push_back(
        {"step-power-control", true, [sizes, pc_sample](std::int64_t n, double tol, Rng& rng) {
           PermutationScheme s;
           s.axes = {AxisPerm::fixed_axis(), AxisPerm::arbitrary(0, sizes.ue_count),
                     AxisPerm::arbitrary(0, sizes.ue_count)};
           return check_equivariance([](const Tensor& x) { return rie_pc_step(x, 1.0, 1.0); },
                                     s, s, pc_sample(54000), n, tol, rng);
         }});
    // The gain matrix couples its rows and columns through one permutation;
    // independent draws must break the symmetry.
    suite.push_back({"negative-control-independent-axes", false,
                     [sizes, pc_sample](std::int64_t n, double tol, Rng& rng) {
                       PermutationScheme s;
                       s.axes = {AxisPerm::fixed_axis(),
                                 AxisPerm::arbitrary(0, sizes.ue_count),
                                 AxisPerm::arbitrary(1, sizes.ue_count)};
                       return check_equivariance(
                           [](const Tensor& x) { return rie_pc_step(x, 1.0, 1.0); }, s, s,
                           pc_sample(55000), n, tol, rng);
                     }});
  }

  // Built networks under the schemes their descriptors imply.
  {
    GnnWidths widths;
    widths.input = 2;
    widths.hidden = 6;
    widths.ffn_hidden = 8;
    const auto ps_model = build_gnn_from_problem(ps_descriptors(), widths, 2,
                                                 setup.fork(61).seed());
    const auto pc_model = build_gnn_from_problem(pc_descriptors(), widths, 2,
                                                 setup.fork(62).seed());
    const auto ris_model = build_gnn_from_problem(ris_multicell_descriptors(2, 2, 2, 3),
                                                  widths, 1, setup.fork(63).seed());
    suite.push_back({"model-beamforming", true,
                     [ps_model](std::int64_t n, double tol, Rng& rng) {
                       const auto scheme = model_scheme(ps_model, {3, 4});
                       return check_equivariance(
                           [&](const Tensor& x) { return ps_model.forward(x); }, scheme,
                           scheme, uniform_sampler({1, 3, 4, 2}), n, tol, rng);
                     }});
    suite.push_back({"model-power-control", true,
                     [pc_model](std::int64_t n, double tol, Rng& rng) {
                       const auto scheme = model_scheme(pc_model, {4, 4});
                       return check_equivariance(
                           [&](const Tensor& x) { return pc_model.forward(x); }, scheme,
                           scheme, uniform_sampler({1, 4, 4, 2}), n, tol, rng);
                     }});
    suite.push_back({"model-multi-cell-surface", true,
                     [ris_model](std::int64_t n, double tol, Rng& rng) {
                       const auto scheme = model_scheme(ris_model, {4, 4, 3});
                       return check_equivariance(
                           [&](const Tensor& x) { return ris_model.forward(x); }, scheme,
                           scheme, uniform_sampler({1, 4, 4, 3, 2}), n, tol, rng);
                     }});
    // Pairing the permuted input with an unpermuted output expectation must
    // fail: it exercises the harness itself.
    suite.push_back({"negative-control-misaligned-output", false,
                     [ps_model](std::int64_t n, double tol, Rng& rng) {
                       const auto in_scheme = model_scheme(ps_model, {3, 4});
                       PermutationScheme fixed;
                       fixed.axes = {AxisPerm::fixed_axis(), AxisPerm::fixed_axis(),
                                     AxisPerm::fixed_axis(), AxisPerm::fixed_axis()};
                       return check_equivariance(
                           [&](const Tensor& x) { return ps_model.forward(x); }, in_scheme,
                           fixed, uniform_sampler({1, 3, 4, 2}), n, tol, rng);
                     }});
  }

  CsvTable table({"target", "kind", "trials", "max_abs_error", "result"});
  bool all_ok = true;
  Rng trial_rng(Rng(seed).fork(5150).seed());
  for (const auto& entry : suite) {
    Rng rng(trial_rng.fork(static_cast<std::uint64_t>(&entry - suite.data())).seed());
    const EquivarianceReport report = entry.run(trials, tolerance, rng);
    const bool ok = report.pass == entry.expect_pass;
    all_ok = all_ok && ok;
    table.begin_row()
        .cell(entry.target)
        .cell(std::string(entry.expect_pass ? "positive" : "negative-control"))
        .cell(report.trials)
        .cell(report.max_abs_err)
        .cell(std::string(report.pass ? "pass" : "fail"));
    out << (ok ? "ok   " : "BAD  ") << entry.target << ": max error "
        << csv_double(report.max_abs_err) << (report.pass ? " (pass)" : " (fail)")
        << (entry.expect_pass ? "" : " [expected to fail]") << "\n";
  }
  table.write(dir / "equivariance.csv");
  out << (all_ok ? "equivariance suite: all targets behaved as expected\n"
                 : "equivariance suite: FAILURES above\n");
  return all_ok ? 0 : 2;
}

// ---------------------------------------------------------------------------
// train
// ---------------------------------------------------------------------------

inline int cmd_train(const ConfigReader& reader, const RunOptions& options,
                     std::ostream& out, std::ostream& err) {
  if (options.trials) {
    throw ConfigError("the train subcommand has no trial count; drop --trials");
  }
  const std::uint64_t seed = resolve_seed(reader, options);
  const auto dir = resolve_out_dir(options);
  const gnn::TrainConfig cfg = read_train_section(reader, seed);
  const ModelSection model_section = read_model_section(reader);
  reader.reject_unknown();

  ConfigData resolved;
  set_kv(resolved, "run", "seed", seed);
  echo_train_section(resolved, cfg);
  echo_model_section(resolved, model_section);
  write_run_stamp(dir, resolved);

  GnnModel model =
      build_gnn_from_problem(ps_descriptors(), model_section.widths, model_section.layers,
                             Rng(seed).fork(31337).seed(), model_section.build);
  out << "train: " << model.param_count() << " parameters, " << cfg.sample_count
      << " samples, " << cfg.epochs << " epochs\n";

  const auto dataset = gnn::make_ps_dataset(cfg);
  gnn::TrainResult result;
  try {
    result = gnn::train_unsupervised(model, dataset, cfg);
  } catch (const gnn::TrainingDivergedError& e) {
    err << "train: " << e.what() << "\n";
    return 2;
  }

  CsvTable table({"epoch", "loss"});
  for (std::size_t epoch = 0; epoch < result.epoch_loss.size(); ++epoch) {
    table.begin_row().cell(static_cast<std::int64_t>(epoch)).cell(result.epoch_loss[epoch]);
  }
  table.write(dir / "loss.csv");
  save_checkpoint((dir / "model.json").string(), model);

  out << "train: final epoch loss " << csv_double(result.epoch_loss.back()) << " over "
      << result.batches_run << " batches -> " << (dir / "model.json").string() << "\n";
  return 0;
}

// ---------------------------------------------------------------------------
// eval-generalization
// ---------------------------------------------------------------------------

inline int cmd_eval_generalization(const ConfigReader& reader, const RunOptions& options,
                                   std::ostream& out) {
  const std::uint64_t seed = resolve_seed(reader, options);
  const auto dir = resolve_out_dir(options);

  const std::string checkpoint = reader.get_string("eval", "checkpoint");
  const std::vector<std::int64_t> user_counts = reader.get_int_list("eval", "user_counts");
  const std::int64_t per_size =
      options.trials ? *options.trials : reader.get_int_or("eval", "per_size", 256);
  if (options.trials) reader.raw("eval", "per_size");
  if (per_size <= 0) throw ConfigError("[eval] per_size must be positive");
  for (std::int64_t users : user_counts) {
    if (users <= 0) throw ConfigError("[eval] user_counts entries must be positive");
  }

  gnn::TrainConfig cfg;
  cfg.seed = seed;
  cfg.bs_antennas = reader.get_int_or("eval", "bs_antennas", 8);
  cfg.power_budget = reader.get_watts_or("eval", "power_budget", 1.0);
  cfg.noise_power = reader.get_watts_or("eval", "noise_power", 1.0);
  if (cfg.bs_antennas <= 0) throw ConfigError("[eval] bs_antennas must be positive");

  WmmsePsConfig baseline;
  baseline.max_iterations = reader.get_int_or("baseline", "max_iterations", 200);
  baseline.tolerance = reader.get_double_or("baseline", "tolerance", baseline.tolerance);
  reader.reject_unknown();

  GnnModel model;
  try {
    model = load_checkpoint(checkpoint);
  } catch (const std::exception& e) {
    throw ConfigError("[eval] checkpoint: cannot load '" + checkpoint + "': " + e.what());
  }

  ConfigData resolved;
  set_kv(resolved, "run", "seed", seed);
  set_kv(resolved, "eval", "checkpoint", checkpoint);
  {
    std::string joined;
    for (std::size_t i = 0; i < user_counts.size(); ++i) {
      if (i > 0) joined += ",";
      joined += std::to_string(user_counts[i]);
    }
    set_kv(resolved, "eval", "user_counts", joined);
  }
  set_kv(resolved, "eval", "per_size", per_size);
  set_kv(resolved, "eval", "bs_antennas", cfg.bs_antennas);
  set_kv(resolved, "eval", "power_budget_watts", cfg.power_budget);
  set_kv(resolved, "eval", "noise_power_watts", cfg.noise_power);
  set_kv(resolved, "baseline", "max_iterations", baseline.max_iterations);
  set_kv(resolved, "baseline", "tolerance", baseline.tolerance);
  write_run_stamp(dir, resolved);

  const auto rows = gnn::eval_size_generalization(gnn::model_policy(model), cfg, user_counts,
                                                  per_size, baseline);

  CsvTable table({"K", "mean_ratio", "ci_low", "ci_high"});
  for (const auto& row : rows) {
    table.begin_row()
        .cell(row.users)
        .cell(row.report.mean_ratio)
        .cell(row.report.ci_low)
        .cell(row.report.ci_high);
    out << "eval K=" << row.users << ": mean SE ratio " << csv_double(row.report.mean_ratio)
        << " [" << csv_double(row.report.ci_low) << ", " << csv_double(row.report.ci_high)
        << "] over " << row.report.evaluated << " instances";
    if (row.report.excluded > 0) out << " (" << row.report.excluded << " excluded)";
    out << "\n";
  }
  table.write(dir / "se_ratio.csv");
  return 0;
}

// ---------------------------------------------------------------------------
// count-flops
// ---------------------------------------------------------------------------

inline int cmd_count_flops(const ConfigReader& reader, const RunOptions& options,
                           std::ostream& out) {
  if (options.trials) {
    throw ConfigError("the count-flops subcommand has no trial count; drop --trials");
  }
  const std::uint64_t seed = resolve_seed(reader, options);
  const auto dir = resolve_out_dir(options);
  const ModelSection model_section = read_model_section(reader);

  std::vector<std::int64_t> users = {2, 4, 8, 16};
  std::vector<std::int64_t> antennas = {4, 8, 16, 32};
  if (reader.has("flops", "users")) users = reader.get_int_list("flops", "users");
  if (reader.has("flops", "bs_antennas")) antennas = reader.get_int_list("flops", "bs_antennas");
  const std::int64_t base_users = reader.get_int_or("flops", "base_users", 3);
  const std::int64_t base_antennas = reader.get_int_or("flops", "base_antennas", 8);
  const bool all_attention = reader.get_bool_or("flops", "all_attention", false);
  for (std::int64_t v : users) {
    if (v <= 0) throw ConfigError("[flops] users entries must be positive");
  }
  for (std::int64_t v : antennas) {
    if (v <= 0) throw ConfigError("[flops] bs_antennas entries must be positive");
  }
  if (base_users <= 0 || base_antennas <= 0) {
    throw ConfigError("[flops] base sizes must be positive");
  }
  reader.reject_unknown();

  const GnnModel model =
      build_gnn_from_problem(ps_descriptors(), model_section.widths, model_section.layers,
                             Rng(seed).fork(31337).seed(), model_section.build);

  ConfigData resolved;
  set_kv(resolved, "run", "seed", seed);
  echo_model_section(resolved, model_section);
  {
    auto join = [](const std::vector<std::int64_t>& xs) {
      std::string s;
      for (std::size_t i = 0; i < xs.size(); ++i) {
        if (i > 0) s += ",";
        s += std::to_string(xs[i]);
      }
      return s;
    };
    set_kv(resolved, "flops", "users", join(users));
    set_kv(resolved, "flops", "bs_antennas", join(antennas));
  }
  set_kv(resolved, "flops", "base_users", base_users);
  set_kv(resolved, "flops", "base_antennas", base_antennas);
  set_kv(resolved, "flops", "all_attention", std::string(all_attention ? "true" : "false"));
  write_run_stamp(dir, resolved);

  CsvTable table({"dim", "size", "count"});
  std::vector<double> ks, k_attention, ns, n_total;
  for (std::int64_t k : users) {
    const FlopReport r = count_flops(model, {k, base_antennas}, all_attention);
    table.begin_row().cell(std::string("user")).cell(k).cell(r.total());
    table.begin_row().cell(std::string("user-attention")).cell(k).cell(r.attention_stage);
    ks.push_back(static_cast<double>(k));
    k_attention.push_back(r.attention_stage);
  }
  for (std::int64_t n : antennas) {
    const FlopReport r = count_flops(model, {base_users, n}, all_attention);
    table.begin_row().cell(std::string("bs-antenna")).cell(n).cell(r.total());
    table.begin_row().cell(std::string("bs-antenna-attention")).cell(n).cell(r.attention_stage);
    ns.push_back(static_cast<double>(n));
    n_total.push_back(r.total());
  }
  table.write(dir / "flops.csv");

  if (ks.size() >= 2) {
    out << "count-flops: attention-stage exponent in users "
        << csv_double(log_log_slope(ks, k_attention)) << "\n";
  }
  if (ns.size() >= 2) {
    out << "count-flops: total exponent in antennas " << csv_double(log_log_slope(ns, n_total))
        << "\n";
  }
  out << "count-flops: " << table.row_count() << " rows -> " << (dir / "flops.csv").string()
      << "\n";
  return 0;
}

}  // namespace experiment_detail

// ---------------------------------------------------------------------------
// Dispatch
// ---------------------------------------------------------------------------

inline int run_experiment(const std::string& subcommand, const RunOptions& options,
                          std::ostream& out, std::ostream& err) {
  try {
    if (options.config_path.empty()) {
      throw ConfigError("no config given: pass --config <path>");
    }
    std::string text;
    try {
      text = read_file_text(options.config_path);
    } catch (const std::exception& e) {
      throw ConfigError("cannot read config '" + options.config_path + "': " + e.what());
    }
    const ConfigReader reader(parse_config(text));

    using namespace experiment_detail;
    if (subcommand == "solve") return cmd_solve(reader, options, out);
    if (subcommand == "verify-rie") return cmd_verify_rie(reader, options, out);
    if (subcommand == "check-equivariance") return cmd_check_equivariance(reader, options, out);
    if (subcommand == "train") return cmd_train(reader, options, out, err);
    if (subcommand == "eval-generalization") return cmd_eval_generalization(reader, options, out);
    if (subcommand == "count-flops") return cmd_count_flops(reader, options, out);
    throw ConfigError("unknown subcommand '" + subcommand + "'");
  } catch (const ConfigError& e) {
    err << "config error: " << e.what() << "\n";
    return 1;
  } catch (const std::exception& e) {
    err << "error: " << e.what() << "\n";
    return 1;
  }
}

}  // namespace pekit
