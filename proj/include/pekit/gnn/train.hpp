#pragma once

// Unsupervised training of the precoder network on downlink beamforming
// instances, plus the evaluation harness used to compare a trained policy
// against the iterative baseline.
//
// The objective is the negative per-sample spectral efficiency, computed from
// the network's precoder through the same differentiable kernel set as the
// network itself, so one reverse sweep yields exact parameter gradients.  No
// labels are involved: the solver appears only at evaluation time, as the
// denominator of the reported SE ratio.
//
// Every stochastic choice (user-count mixture, channel draws, shuffles,
// bootstrap resamples) flows from a single config seed through independent
// fork() streams, so a run is reproducible bit-for-bit.  Training batches mix
// instances of different user counts; each batch is split into equally sized
// groups so tensors stay rectangular, and group gradients are recombined with
// weights proportional to group size before the optimizer step.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <functional>
#include <map>
#include <numeric>
#include <sstream>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include "pekit/autodiff.hpp"
#include "pekit/channels.hpp"
#include "pekit/gnn/model.hpp"
#include "pekit/rng.hpp"
#include "pekit/solvers/wmmse_ps.hpp"
#include "pekit/tensor.hpp"

namespace pekit::gnn {

// ---------------------------------------------------------------------------
// Configuration
// ---------------------------------------------------------------------------

struct TrainConfig {
  std::int64_t sample_count = 1024;
  std::int64_t batch_size = 16;
  std::int64_t epochs = 15;
  double learning_rate = 1e-3;
  double lr_decay = 1.0;  // per-epoch multiplicative factor on the step size
  std::uint64_t seed = 1;
  std::int64_t bs_antennas = 8;
  std::int64_t fixed_users = 0;  // 0 = draw user counts from the mixture below
  std::int64_t max_users = 8;    // redraw cap for the mixture
  double noise_power = 1.0;      // watts
  double power_budget = 1.0;     // watts
};

inline void validate_train_config(const TrainConfig& cfg) {
  const auto fail = [](const std::string& what) {
    throw std::invalid_argument("train config: " + what);
  };
  if (cfg.sample_count <= 0) fail("sample_count must be positive");
  if (cfg.batch_size <= 0) fail("batch_size must be positive");
  if (cfg.epochs <= 0) fail("epochs must be positive");
  if (!(cfg.learning_rate > 0.0)) fail("learning_rate must be positive");
  if (!(cfg.lr_decay > 0.0)) fail("lr_decay must be positive");
  if (cfg.bs_antennas <= 0) fail("bs_antennas must be positive");
  if (cfg.fixed_users < 0) fail("fixed_users cannot be negative");
  if (cfg.max_users <= 0) fail("max_users must be positive");
  if (cfg.fixed_users > 0 && cfg.fixed_users > cfg.max_users)
    fail("fixed_users cannot exceed max_users");
  if (!(cfg.noise_power > 0.0)) fail("noise_power must be positive");
  if (!(cfg.power_budget > 0.0)) fail("power_budget must be positive");
}

// ---------------------------------------------------------------------------
// Training set
// ---------------------------------------------------------------------------

// User-count mixture: 1 + a unit-mean exponential draw, rounded to the nearest
// integer, redrawn until the result is within the cap.  The mass at {1, 2, 3}
// is 1 - exp(-2.5) ~ 0.918 before capping, so small networks dominate while a
// tail of larger ones still appears.
inline std::int64_t sample_user_count(Rng& rng, std::int64_t max_users = 8) {
  if (max_users < 1) throw std::invalid_argument("sample_user_count: cap must be >= 1");
  for (;;) {
    const auto k = static_cast<std::int64_t>(std::llround(1.0 + rng.exponential(1.0)));
    if (k <= max_users) return k;
  }
}

inline std::vector<PsData> make_ps_dataset(const TrainConfig& cfg) {
  validate_train_config(cfg);
  const Rng root(cfg.seed);
  Rng mixture = root.fork(9001);
  InstanceConstants constants;
  constants.power_budget = cfg.power_budget;
  constants.noise_power = cfg.noise_power;

  std::vector<PsData> out;
  out.reserve(static_cast<std::size_t>(cfg.sample_count));
  for (std::int64_t i = 0; i < cfg.sample_count; ++i) {
    const std::int64_t users =
        cfg.fixed_users > 0 ? cfg.fixed_users : sample_user_count(mixture, cfg.max_users);
    SizeSpec sizes;
    sizes.ue_count = users;
    sizes.bs_antennas = cfg.bs_antennas;
    auto inst = generate_channels(ProblemVariant::kPs, sizes, ChannelModel::rayleigh(),
                                  root.fork(static_cast<std::uint64_t>(i)).seed(), constants);
    out.push_back(std::move(inst.ps));
  }
  return out;
}

// ---------------------------------------------------------------------------
// Differentiable objective
// ---------------------------------------------------------------------------

// The network's first set axis is whichever set the builder moved to the
// front; the input packing must agree with it.  This helper reads the choice
// off the model for the two-set downlink layout ("user" / "bs-antenna").
inline bool ps_user_axis_first(const GnnModel& model) {
  if (model.descriptors.size() != 2)
    throw std::invalid_argument("ps_user_axis_first: expected a two-set model");
  return model.descriptors.front().name == "user";
}

// Packs equally sized instances into the network input {batch, n_1, n_2, 2}
// with the channel's real and imaginary parts as the two input features.
inline Tensor ps_input_batch(const std::vector<const PsData*>& group, bool user_axis_first) {
  if (group.empty()) throw std::invalid_argument("ps_input_batch: empty group");
  const auto batch = static_cast<std::int64_t>(group.size());
  const std::int64_t antennas = group.front()->channel.rows();
  const std::int64_t users = group.front()->channel.cols();
  for (const PsData* data : group) {
    if (data->channel.rows() != antennas || data->channel.cols() != users)
      throw std::invalid_argument("ps_input_batch: instances in a group must share sizes");
  }
  const std::int64_t n1 = user_axis_first ? users : antennas;
  const std::int64_t n2 = user_axis_first ? antennas : users;
  Tensor x = Tensor::zeros({batch, n1, n2, 2});
  double* out = x.mutable_data();
  std::int64_t pos = 0;
  for (std::int64_t b = 0; b < batch; ++b) {
    const CMat& h = group[static_cast<std::size_t>(b)]->channel;
    for (std::int64_t i = 0; i < n1; ++i) {
      for (std::int64_t j = 0; j < n2; ++j) {
        const std::complex<double> v = user_axis_first ? h(j, i) : h(i, j);
        out[pos++] = v.real();
        out[pos++] = v.imag();
      }
    }
  }
  return x;
}

// Real and imaginary channel parts in user-major order {batch, K, N_B},
// independent of the network's axis choice.
inline std::pair<Tensor, Tensor> ps_channel_parts(const std::vector<const PsData*>& group) {
  if (group.empty()) throw std::invalid_argument("ps_channel_parts: empty group");
  const auto batch = static_cast<std::int64_t>(group.size());
  const std::int64_t antennas = group.front()->channel.rows();
  const std::int64_t users = group.front()->channel.cols();
  Tensor hr = Tensor::zeros({batch, users, antennas});
  Tensor hi = Tensor::zeros({batch, users, antennas});
  double* pr = hr.mutable_data();
  double* pi = hi.mutable_data();
  std::int64_t pos = 0;
  for (std::int64_t b = 0; b < batch; ++b) {
    const CMat& h = group[static_cast<std::size_t>(b)]->channel;
    for (std::int64_t k = 0; k < users; ++k) {
      for (std::int64_t n = 0; n < antennas; ++n) {
        pr[pos] = h(n, k).real();
        pi[pos] = h(n, k).imag();
        ++pos;
      }
    }
  }
  return {std::move(hr), std::move(hi)};
}

// Per-sample spectral efficiency of a batch of precoders, as a graph over the
// differentiable kernels.  hr/hi are the user-major channel parts {B, K, N};
// wr/wi follow the network layout: {B, K, N} when the user axis leads,
// {B, N, K} otherwise.  Returns {B}: sum over users of log2(1 + SINR).
inline Tensor ps_batch_se(const Tensor& wr, const Tensor& wi, const Tensor& hr,
                          const Tensor& hi, double noise_power, bool user_axis_first) {
  const std::int64_t batch = hr.dim(0);
  const std::int64_t users = hr.dim(1);

  // c[b, k, j] = <h_k, w_j> with the receive side conjugated:
  // Re = hr.wr + hi.wi, Im = hr.wi - hi.wr, contracted over antennas.
  Tensor re_c = user_axis_first
                    ? add(matmul(hr, wr, false, true), matmul(hi, wi, false, true))
                    : add(matmul(hr, wr), matmul(hi, wi));
  Tensor im_c = user_axis_first
                    ? sub(matmul(hr, wi, false, true), matmul(hi, wr, false, true))
                    : sub(matmul(hr, wi), matmul(hi, wr));
  Tensor power = add(mul(re_c, re_c), mul(im_c, im_c));  // {B, K, K}

  Tensor eye = Tensor::zeros({batch, users, users});
  double* e = eye.mutable_data();
  for (std::int64_t b = 0; b < batch; ++b)
    for (std::int64_t k = 0; k < users; ++k) e[(b * users + k) * users + k] = 1.0;

  Tensor signal = sum_axis(mul(power, eye), 2);                       // {B, K}
  Tensor interference = sub(sum_axis(power, 2), signal);              // {B, K}
  Tensor denom = add(interference, Tensor::scalar(noise_power));
  Tensor sinr = mul(signal, reciprocal(denom));
  Tensor rate = scale(pekit::log(add(sinr, Tensor::scalar(1.0))), 1.0 / std::log(2.0));
  return sum_axis(rate, 1);  // {B}
}

// Mean negative spectral efficiency of one equally sized group, evaluated at
// an explicit parameter list so the same graph serves training and
// finite-difference checks.
inline Tensor ps_group_loss(const GnnModel& model, const std::vector<Tensor>& params,
                            const std::vector<const PsData*>& group, bool user_axis_first) {
  if (group.empty()) throw std::invalid_argument("ps_group_loss: empty group");
  const double budget = group.front()->power_budget;
  const double noise = group.front()->noise_power;
  for (const PsData* data : group) {
    if (data->power_budget != budget || data->noise_power != noise)
      throw std::invalid_argument("ps_group_loss: instances in a group must share constants");
  }
  Tensor x = ps_input_batch(group, user_axis_first);
  auto [hr, hi] = ps_channel_parts(group);
  auto pair = model.precoder_pair(x, params, budget);
  Tensor se = ps_batch_se(pair.real, pair.imag, hr, hi, noise, user_axis_first);
  return scale(sum_all(se), -1.0 / static_cast<double>(group.size()));
}

// ---------------------------------------------------------------------------
// Optimizer
// ---------------------------------------------------------------------------

struct AdamConfig {
  double learning_rate = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;
};

struct AdamState {
  std::int64_t step = 0;
  std::vector<std::vector<double>> m;
  std::vector<std::vector<double>> v;
};

inline AdamState adam_init(const std::vector<NamedTensor>& params) {
  AdamState state;
  state.m.reserve(params.size());
  state.v.reserve(params.size());
  for (const auto& p : params) {
    state.m.emplace_back(static_cast<std::size_t>(p.value.size()), 0.0);
    state.v.emplace_back(static_cast<std::size_t>(p.value.size()), 0.0);
  }
  return state;
}

inline void adam_step(AdamState& state, std::vector<NamedTensor>& params,
                      const std::vector<std::vector<double>>& grads, const AdamConfig& cfg) {
  if (grads.size() != params.size() || state.m.size() != params.size())
    throw std::invalid_argument("adam_step: parameter/gradient/state size mismatch");
  state.step += 1;
  const double bc1 = 1.0 - std::pow(cfg.beta1, static_cast<double>(state.step));
  const double bc2 = 1.0 - std::pow(cfg.beta2, static_cast<double>(state.step));
  for (std::size_t pi = 0; pi < params.size(); ++pi) {
    auto& m = state.m[pi];
    auto& v = state.v[pi];
    const auto& g = grads[pi];
    if (g.size() != m.size())
      throw std::invalid_argument("adam_step: gradient width mismatch for " + params[pi].name);
    double* w = params[pi].value.mutable_data();
    for (std::size_t i = 0; i < g.size(); ++i) {
      m[i] = cfg.beta1 * m[i] + (1.0 - cfg.beta1) * g[i];
      v[i] = cfg.beta2 * v[i] + (1.0 - cfg.beta2) * g[i] * g[i];
      const double m_hat = m[i] / bc1;
      const double v_hat = v[i] / bc2;
      w[i] -= cfg.learning_rate * m_hat / (std::sqrt(v_hat) + cfg.epsilon);
    }
  }
}

// ---------------------------------------------------------------------------
// Training loop
// ---------------------------------------------------------------------------

class TrainingDivergedError : public std::runtime_error {
 public:
  TrainingDivergedError(const std::string& what, std::int64_t epoch, std::int64_t batch,
                        double loss)
      : std::runtime_error(what), epoch(epoch), batch(batch), loss(loss) {}
  std::int64_t epoch;
  std::int64_t batch;
  double loss;
};

struct TrainResult {
  std::vector<double> epoch_loss;  // mean per-sample negative SE, one per epoch
  std::int64_t batches_run = 0;
  std::int64_t sample_count = 0;
};

// Minibatch training with mixed instance sizes.  Each shuffled batch is split
// by user count into rectangular groups; every group runs its own taped
// forward/backward, and group gradients are averaged with weights
// group_size / batch_size before a single optimizer step.  A non-finite batch
// loss or gradient aborts with a diagnostic rather than training through NaNs.
inline TrainResult train_unsupervised(GnnModel& model, const std::vector<PsData>& dataset,
                                      const TrainConfig& cfg) {
  validate_train_config(cfg);
  if (dataset.empty()) throw std::invalid_argument("train_unsupervised: empty dataset");
  const bool user_first = ps_user_axis_first(model);
  const Rng root(cfg.seed);

  AdamState adam = adam_init(model.params);
  TrainResult result;
  result.sample_count = static_cast<std::int64_t>(dataset.size());

  std::vector<std::size_t> order(dataset.size());
  std::iota(order.begin(), order.end(), std::size_t{0});

  for (std::int64_t epoch = 0; epoch < cfg.epochs; ++epoch) {
    Rng shuffle = root.fork(777000u + static_cast<std::uint64_t>(epoch));
    for (std::size_t i = order.size(); i > 1; --i) {
      const std::size_t j = static_cast<std::size_t>(shuffle.raw() % i);
      std::swap(order[i - 1], order[j]);
    }

    AdamConfig step_cfg;
    step_cfg.learning_rate =
        cfg.learning_rate * std::pow(cfg.lr_decay, static_cast<double>(epoch));

    double epoch_sum = 0.0;
    std::int64_t batch_index = 0;
    for (std::size_t start = 0; start < order.size();
         start += static_cast<std::size_t>(cfg.batch_size), ++batch_index) {
      const std::size_t stop =
          std::min(order.size(), start + static_cast<std::size_t>(cfg.batch_size));
      const double chunk = static_cast<double>(stop - start);

      std::map<std::int64_t, std::vector<const PsData*>> groups;
      for (std::size_t i = start; i < stop; ++i) {
        const PsData& data = dataset[order[i]];
        groups[data.channel.cols()].push_back(&data);
      }

      std::vector<std::vector<double>> grads;
      grads.reserve(model.params.size());
      for (const auto& p : model.params)
        grads.emplace_back(static_cast<std::size_t>(p.value.size()), 0.0);
      double batch_loss = 0.0;

      for (const auto& [users, members] : groups) {
        (void)users;
        const double weight = static_cast<double>(members.size()) / chunk;
        Tape tape;
        TapeScope scope(tape);
        std::vector<Tensor> watched;
        watched.reserve(model.params.size());
        for (const auto& p : model.params) watched.push_back(tape.watch(p.value));
        Tensor loss = ps_group_loss(model, watched, members, user_first);
        tape.backward(loss);
        for (std::size_t pi = 0; pi < watched.size(); ++pi) {
          const Tensor g = tape.grad(watched[pi]);
          const std::vector<double>& gv = g.values();
          for (std::size_t i = 0; i < gv.size(); ++i) grads[pi][i] += weight * gv[i];
        }
        batch_loss += weight * loss.item();
      }

      bool finite = std::isfinite(batch_loss);
      for (const auto& g : grads) {
        for (double value : g) finite = finite && std::isfinite(value);
        if (!finite) break;
      }
      if (!finite) {
        std::ostringstream msg;
        msg << "training diverged: non-finite loss or gradient at epoch " << epoch
            << ", batch " << batch_index << " (batch loss " << batch_loss
            << ", step size " << step_cfg.learning_rate << ")";
        throw TrainingDivergedError(msg.str(), epoch, batch_index, batch_loss);
      }

      adam_step(adam, model.params, grads, step_cfg);
      epoch_sum += batch_loss * chunk;
      result.batches_run += 1;
    }
    result.epoch_loss.push_back(epoch_sum / static_cast<double>(dataset.size()));
  }
  return result;
}

// ---------------------------------------------------------------------------
// Evaluation
// ---------------------------------------------------------------------------

// A policy is anything that maps one instance to a precoder.
using PsPolicy = std::function<CMat(const PsData&)>;

// Runs the trained network on a single instance (no tape, batch of one).
inline CMat gnn_precoder(const GnnModel& model, const PsData& data) {
  const bool user_first = ps_user_axis_first(model);
  const std::vector<const PsData*> group = {&data};
  Tensor x = ps_input_batch(group, user_first);
  auto pair = model.precoder_pair(x, model.values(), data.power_budget);
  const std::int64_t antennas = data.channel.rows();
  const std::int64_t users = data.channel.cols();
  CMat w(antennas, users);
  const double* re = pair.real.data();
  const double* im = pair.imag.data();
  for (std::int64_t i = 0; i < pair.real.dim(1); ++i) {
    for (std::int64_t j = 0; j < pair.real.dim(2); ++j) {
      const std::int64_t flat = i * pair.real.dim(2) + j;
      const std::int64_t n = user_first ? j : i;
      const std::int64_t k = user_first ? i : j;
      w(n, k) = std::complex<double>(re[flat], im[flat]);
    }
  }
  return w;
}

inline PsPolicy model_policy(const GnnModel& model) {
  // Captures by pointer: the model must outlive the returned policy.
  const GnnModel* m = &model;
  return [m](const PsData& data) { return gnn_precoder(*m, data); };
}

struct SeRatioReport {
  double mean_ratio = 0.0;
  double ci_low = 0.0;   // bootstrap percentile bounds on the mean
  double ci_high = 0.0;
  std::int64_t evaluated = 0;
  std::int64_t excluded = 0;  // instances whose baseline SE was zero
  std::vector<double> ratios;
};

// Mean of policy SE / baseline SE over a test set, with a seeded bootstrap
// percentile interval (resampling instances with replacement).  Instances
// whose baseline SE is zero carry no meaningful ratio; they are excluded and
// counted.
inline SeRatioReport eval_se_ratio(const PsPolicy& policy, const std::vector<PsData>& instances,
                                   std::uint64_t bootstrap_seed = 814050,
                                   std::int64_t resamples = 1000,
                                   const WmmsePsConfig& baseline = {}) {
  if (instances.empty()) throw std::invalid_argument("eval_se_ratio: empty test set");
  SeRatioReport report;
  for (const PsData& data : instances) {
    const auto base = wmmse_ps_solve(data, baseline);
    const double denom = se_ps(data, base.state.precoder);
    if (!(denom > 0.0)) {
      report.excluded += 1;
      continue;
    }
    report.ratios.push_back(se_ps(data, policy(data)) / denom);
  }
  report.evaluated = static_cast<std::int64_t>(report.ratios.size());
  if (report.evaluated == 0)
    throw std::runtime_error("eval_se_ratio: every baseline spectral efficiency was zero");

  const double n = static_cast<double>(report.ratios.size());
  report.mean_ratio =
      std::accumulate(report.ratios.begin(), report.ratios.end(), 0.0) / n;

  if (resamples > 0) {
    Rng rng(bootstrap_seed);
    std::vector<double> means(static_cast<std::size_t>(resamples));
    for (auto& mean : means) {
      double sum = 0.0;
      for (std::size_t i = 0; i < report.ratios.size(); ++i)
        sum += report.ratios[rng.raw() % report.ratios.size()];
      mean = sum / n;
    }
    std::sort(means.begin(), means.end());
    const auto last = static_cast<double>(means.size() - 1);
    report.ci_low = means[static_cast<std::size_t>(std::floor(0.025 * last))];
    report.ci_high = means[static_cast<std::size_t>(std::ceil(0.975 * last))];
  } else {
    report.ci_low = report.ci_high = report.mean_ratio;
  }
  return report;
}

// Fresh test instances at a fixed user count, drawn from a fork of the config
// seed that training never touches.
inline std::vector<PsData> make_ps_test_set(const TrainConfig& cfg, std::int64_t users,
                                            std::int64_t count) {
  if (users <= 0 || count <= 0)
    throw std::invalid_argument("make_ps_test_set: users and count must be positive");
  const Rng eval_root = Rng(cfg.seed).fork(424242);
  InstanceConstants constants;
  constants.power_budget = cfg.power_budget;
  constants.noise_power = cfg.noise_power;
  SizeSpec sizes;
  sizes.ue_count = users;
  sizes.bs_antennas = cfg.bs_antennas;
  std::vector<PsData> out;
  out.reserve(static_cast<std::size_t>(count));
  for (std::int64_t i = 0; i < count; ++i) {
    const std::uint64_t seed =
        eval_root.fork(static_cast<std::uint64_t>(users) * 1000003u +
                       static_cast<std::uint64_t>(i))
            .seed();
    out.push_back(generate_channels(ProblemVariant::kPs, sizes, ChannelModel::rayleigh(),
                                    seed, constants)
                      .ps);
  }
  return out;
}

struct SizeGeneralizationRow {
  std::int64_t users = 0;
  SeRatioReport report;
};

// Evaluates one policy across several user counts on fresh instances.  Used to
// measure how performance carries from the sizes a network trained on to
// larger ones it never saw.
inline std::vector<SizeGeneralizationRow> eval_size_generalization(
    const PsPolicy& policy, const TrainConfig& cfg, const std::vector<std::int64_t>& user_counts,
    std::int64_t per_size, const WmmsePsConfig& baseline = {}) {
  if (per_size <= 0)
    throw std::invalid_argument("eval_size_generalization: per_size must be positive");
  std::vector<SizeGeneralizationRow> rows;
  rows.reserve(user_counts.size());
  const Rng eval_root = Rng(cfg.seed).fork(424242);
  for (std::int64_t users : user_counts) {
    SizeGeneralizationRow row;
    row.users = users;
    row.report = eval_se_ratio(policy, make_ps_test_set(cfg, users, per_size),
                               eval_root.fork(static_cast<std::uint64_t>(users)).seed(),
                               1000, baseline);
    rows.push_back(std::move(row));
  }
  return rows;
}

}  // namespace pekit::gnn
