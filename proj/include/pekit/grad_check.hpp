#pragma once

// Central finite-difference verification of reverse-mode gradients.
//
// The callable is evaluated once under a fresh tape to obtain analytic
// gradients, then twice per parameter component (x +- step) with no tape to
// obtain numeric ones.  Errors are scaled: |a - n| / max(1, |a|, |n|), so the
// report reads as a relative error for large gradients and an absolute one
// near zero.

#include <cmath>
#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include "pekit/autodiff.hpp"
#include "pekit/tensor.hpp"

namespace pekit {

struct GradCheckReport {
  double max_scaled_err = 0.0;
  std::size_t worst_param = 0;
  std::int64_t worst_index = -1;
  double worst_analytic = 0.0;
  double worst_numeric = 0.0;
};

// f maps the parameter list to a single-element tensor.  It must be pure: the
// same inputs always produce the same value.
inline GradCheckReport grad_check(
    const std::function<Tensor(const std::vector<Tensor>&)>& f,
    const std::vector<Tensor>& params, double step = 1e-6) {
  std::vector<Tensor> analytic;
  {
    Tape tape;
    TapeScope scope(tape);
    std::vector<Tensor> watched;
    watched.reserve(params.size());
    for (const auto& p : params) watched.push_back(tape.watch(Tensor(p.shape(), p.values())));
    Tensor loss = f(watched);
    tape.backward(loss);
    for (const auto& w : watched) analytic.push_back(tape.grad(w));
  }

  GradCheckReport report;
  std::vector<Tensor> probe;
  probe.reserve(params.size());
  for (const auto& p : params) probe.push_back(Tensor(p.shape(), p.values()));

  for (std::size_t pi = 0; pi < probe.size(); ++pi) {
    for (std::int64_t i = 0; i < probe[pi].size(); ++i) {
      const double saved = probe[pi].data()[i];
      probe[pi].mutable_data()[i] = saved + step;
      const double fp = f(probe).item();
      probe[pi].mutable_data()[i] = saved - step;
      const double fm = f(probe).item();
      probe[pi].mutable_data()[i] = saved;

      const double n = (fp - fm) / (2.0 * step);
      const double a = analytic[pi].data()[i];
      const double err = std::abs(a - n) / std::max({1.0, std::abs(a), std::abs(n)});
      if (err > report.max_scaled_err) {
        report.max_scaled_err = err;
        report.worst_param = pi;
        report.worst_index = i;
        report.worst_analytic = a;
        report.worst_numeric = n;
      }
    }
  }
  return report;
}

}  // namespace pekit
