#include "wmar/evalkit.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

#include "wmar/errors.hpp"

namespace wmar {

namespace {

double lerp_quantile(const std::vector<double>& sorted, double p) {
  const size_t n = sorted.size();
  if (n == 1) return sorted[0];
  const double h = p * static_cast<double>(n - 1);
  const double fl = std::floor(h);
  const size_t lo = static_cast<size_t>(fl);
  const size_t hi = std::min(lo + 1, n - 1);
  return sorted[lo] + (h - fl) * (sorted[hi] - sorted[lo]);
}

double mean_of(const std::vector<double>& v) {
  double acc = 0.0;
  for (const double x : v) acc += x;
  return acc / static_cast<double>(v.size());
}

}  // namespace

void PerfCurve::push(int64_t step, double value) {
  if (!std::isfinite(value))
    throw RuntimeError("PerfCurve::push: value must be finite at step " + std::to_string(step));
  if (!steps_.empty() && step <= steps_.back())
    throw RuntimeError("PerfCurve::push: steps must be strictly increasing, got " +
                       std::to_string(step) + " after " + std::to_string(steps_.back()));
  steps_.push_back(step);
  values_.push_back(value);
}

int64_t PerfCurve::first_step() const {
  if (empty()) throw RuntimeError("PerfCurve: empty curve has no first step");
  return steps_.front();
}

int64_t PerfCurve::last_step() const {
  if (empty()) throw RuntimeError("PerfCurve: empty curve has no last step");
  return steps_.back();
}

double PerfCurve::at(int64_t step) const {
  if (empty()) throw RuntimeError("PerfCurve::at: curve is empty");
  if (step < steps_.front())
    throw RuntimeError("PerfCurve::at: step " + std::to_string(step) +
                       " precedes the first recorded step " + std::to_string(steps_.front()));
  // Last recorded point at or before the query.
  const auto it = std::upper_bound(steps_.begin(), steps_.end(), step);
  const size_t idx = static_cast<size_t>(it - steps_.begin()) - 1;
  return values_[idx];
}

double PerfCurve::window_mean(int64_t lo, int64_t hi) const {
  if (lo >= hi)
    throw RuntimeError("PerfCurve::window_mean: window (" + std::to_string(lo) + ", " +
                       std::to_string(hi) + "] is empty");
  if (empty()) throw RuntimeError("PerfCurve::window_mean: curve is empty");
  if (steps_.front() > lo)
    throw RuntimeError("PerfCurve::window_mean: curve starts at " +
                       std::to_string(steps_.front()) + ", after window start " +
                       std::to_string(lo));
  double acc = 0.0;
  for (size_t i = 0; i < steps_.size(); ++i) {
    // values_[i] holds on [steps_[i], next recorded step).
    const double seg_lo = static_cast<double>(std::max(steps_[i], lo));
    const double seg_hi = i + 1 < steps_.size()
                              ? static_cast<double>(std::min(steps_[i + 1], hi))
                              : static_cast<double>(hi);
    if (seg_hi > seg_lo) acc += values_[i] * (seg_hi - seg_lo);
  }
  return acc / static_cast<double>(hi - lo);
}

double normalize_value(double p, double p_rand, double p_single) {
  if (p_single == p_rand)
    throw RuntimeError("normalize: baselines coincide, score has no scale");
  return (p - p_rand) / (p_single - p_rand);
}

PerfCurve normalize_curve(const PerfCurve& p, double p_rand, double p_single) {
  PerfCurve q;
  for (size_t i = 0; i < p.size(); ++i)
    q.push(p.steps()[i], normalize_value(p.values()[i], p_rand, p_single));
  return q;
}

double forgetting(const std::vector<PerfCurve>& q, int64_t steps_per_task) {
  if (q.empty()) throw RuntimeError("forgetting: no task curves");
  if (steps_per_task <= 0) throw RuntimeError("forgetting: steps_per_task must be positive");
  const int64_t total = static_cast<int64_t>(q.size()) * steps_per_task;
  double acc = 0.0;
  for (size_t i = 0; i < q.size(); ++i) {
    const int64_t own_end = static_cast<int64_t>(i + 1) * steps_per_task;
    acc += q[i].at(own_end) - q[i].at(total);
  }
  return acc / static_cast<double>(q.size());
}

TransferResult forward_transfer(const std::vector<PerfCurve>& q_cl,
                                const std::vector<PerfCurve>& q_single,
                                int64_t steps_per_task) {
  if (q_cl.empty()) throw RuntimeError("forward transfer: no task curves");
  if (q_cl.size() != q_single.size())
    throw RuntimeError("forward transfer: need one single-task curve per task");
  if (steps_per_task <= 0)
    throw RuntimeError("forward transfer: steps_per_task must be positive");
  TransferResult r;
  for (size_t i = 0; i < q_cl.size(); ++i) {
    const int64_t lo = static_cast<int64_t>(i) * steps_per_task;
    const double s = q_cl[i].window_mean(lo, lo + steps_per_task);
    const double s_single = q_single[i].window_mean(0, steps_per_task);
    if (s_single == 0.0) {
      r.excluded.push_back(static_cast<int>(i));
      r.warnings.push_back("forward transfer: task " + std::to_string(i) +
                           " has a zero single-task window mean, excluded");
      continue;
    }
    r.per_task.push_back((s - s_single) / s_single);
  }
  if (r.per_task.empty())
    throw RuntimeError("forward transfer: every task lacks a usable single-task baseline");
  r.forward_transfer = mean_of(r.per_task);
  return r;
}

Quartiles quartiles(std::vector<double> values) {
  if (values.empty()) throw RuntimeError("quartiles: no values");
  for (const double v : values)
    if (!std::isfinite(v)) throw RuntimeError("quartiles: values must be finite");
  std::sort(values.begin(), values.end());
  Quartiles q;
  q.q25 = lerp_quantile(values, 0.25);
  q.median = lerp_quantile(values, 0.5);
  q.q75 = lerp_quantile(values, 0.75);
  return q;
}

SuiteMetrics compute_suite_metrics(const std::vector<PerfCurve>& raw_cl,
                                   const std::vector<PerfCurve>& raw_single,
                                   const std::vector<double>& p_rand,
                                   const std::vector<double>& p_single,
                                   int64_t steps_per_task) {
  const size_t tasks = raw_cl.size();
  if (tasks == 0) throw RuntimeError("suite metrics: no tasks");
  if (raw_single.size() != tasks || p_rand.size() != tasks || p_single.size() != tasks)
    throw RuntimeError("suite metrics: per-task inputs disagree on task count");
  if (steps_per_task <= 0)
    throw RuntimeError("suite metrics: steps_per_task must be positive");

  SuiteMetrics m;
  m.q.resize(tasks);
  m.task_forgetting.assign(tasks, std::numeric_limits<double>::quiet_NaN());
  m.task_transfer.assign(tasks, std::numeric_limits<double>::quiet_NaN());
  std::vector<PerfCurve> q_single(tasks);
  std::vector<bool> usable(tasks, false);
  for (size_t i = 0; i < tasks; ++i) {
    if (p_single[i] == p_rand[i]) {
      m.excluded_tasks.push_back(static_cast<int>(i));
      m.warnings.push_back("task " + std::to_string(i) +
                           ": single-task and random baselines coincide, excluded");
      continue;
    }
    m.q[i] = normalize_curve(raw_cl[i], p_rand[i], p_single[i]);
    q_single[i] = normalize_curve(raw_single[i], p_rand[i], p_single[i]);
    usable[i] = true;
  }

  const int64_t total = static_cast<int64_t>(tasks) * steps_per_task;
  double forget_acc = 0.0;
  int forget_count = 0;
  for (size_t i = 0; i < tasks; ++i) {
    if (!usable[i]) continue;
    const int64_t own_end = static_cast<int64_t>(i + 1) * steps_per_task;
    m.task_forgetting[i] = m.q[i].at(own_end) - m.q[i].at(total);
    forget_acc += m.task_forgetting[i];
    ++forget_count;
  }
  if (forget_count == 0) throw RuntimeError("suite metrics: every task was excluded");
  m.forgetting = forget_acc / static_cast<double>(forget_count);

  for (size_t i = 0; i < tasks; ++i) {
    if (!usable[i]) continue;
    const int64_t lo = static_cast<int64_t>(i) * steps_per_task;
    const double s = m.q[i].window_mean(lo, lo + steps_per_task);
    const double s_single = q_single[i].window_mean(0, steps_per_task);
    if (s_single == 0.0) {
      m.excluded_tasks.push_back(static_cast<int>(i));
      m.warnings.push_back("task " + std::to_string(i) +
                           ": zero single-task window mean, excluded from transfer");
      continue;
    }
    m.task_transfer[i] = (s - s_single) / s_single;
    m.ft_components.push_back(m.task_transfer[i]);
  }
  if (m.ft_components.empty())
    throw RuntimeError("suite metrics: no task has a usable transfer baseline");
  m.forward_transfer = mean_of(m.ft_components);
  std::sort(m.excluded_tasks.begin(), m.excluded_tasks.end());
  return m;
}

}  // namespace wmar
