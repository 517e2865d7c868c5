#pragma once

#include <functional>
#include <string>

#include "wmar/nn.hpp"
#include "wmar/tape.hpp"

namespace wmar {

struct GradCheckReport {
  double max_rel_err = 0.0;
  std::string worst_param;
  size_t worst_index = 0;
  double analytic_at_worst = 0.0;
  double numeric_at_worst = 0.0;
};

// Central finite-difference check of d(loss)/d(param) for every element of
// every param in the store. `build` must construct the loss on the given
// tape and be deterministic across calls (reseed any RNG it uses inside).
// Runs at double precision; relative error uses |a|+|n| with a floor so
// near-zero gradients do not explode the ratio.
inline GradCheckReport grad_check(ParamStore<double>& ps,
                                  const std::function<Var<double>(Tape<double>&)>& build,
                                  double step = 1e-5) {
  ps.zero_grads();
  {
    Tape<double> t;
    Var<double> loss = build(t);
    t.backward(loss);
  }

  auto eval = [&]() {
    Tape<double> t;
    t.grad_enabled = false;
    return build(t).value()(0, 0);
  };

  GradCheckReport report;
  for (auto& p : ps) {
    for (size_t i = 0; i < p.value.size(); ++i) {
      const double saved = p.value.data()[i];
      p.value.data()[i] = saved + step;
      const double up = eval();
      p.value.data()[i] = saved - step;
      const double down = eval();
      p.value.data()[i] = saved;
      const double numeric = (up - down) / (2.0 * step);
      const double analytic = p.grad.data()[i];
      const double rel = std::abs(analytic - numeric) /
                         std::max(std::abs(analytic) + std::abs(numeric), 1e-6);
      if (rel > report.max_rel_err) {
        report.max_rel_err = rel;
        report.worst_param = p.name;
        report.worst_index = i;
        report.analytic_at_worst = analytic;
        report.numeric_at_worst = numeric;
      }
    }
  }
  return report;
}

}  // namespace wmar
