#pragma once

#include <cstdint>
#include <string>
#include <vector>

namespace wmar {

// Evaluation scores for one task, recorded against global environment steps
// and read back as a step function: each value holds from its own step until
// the next recorded step. All metric code treats curves this way, so querying
// a recorded step returns exactly the recorded value.
class PerfCurve {
 public:
  // Steps must be strictly increasing and values finite.
  void push(int64_t step, double value);

  bool empty() const { return steps_.size() == 0; }
  size_t size() const { return steps_.size(); }
  int64_t first_step() const;
  int64_t last_step() const;
  const std::vector<int64_t>& steps() const { return steps_; }
  const std::vector<double>& values() const { return values_; }

  // Carry-forward lookup. step must not precede the first recorded point.
  double at(int64_t step) const;

  // Mean over the half-open window (lo, hi], weighting each recorded value
  // by the number of steps it covers inside the window. This stays unbiased
  // when evaluation points are unevenly spaced. The curve must cover the
  // whole window, so first_step() <= lo is required.
  double window_mean(int64_t lo, int64_t hi) const;

 private:
  std::vector<int64_t> steps_;
  std::vector<double> values_;
};

// Rescales a raw score so random play maps to 0 and single-task performance
// maps to 1. The baselines must differ; callers decide how to exclude
// degenerate tasks.
double normalize_value(double p, double p_rand, double p_single);

// Applies normalize_value pointwise across a curve.
PerfCurve normalize_curve(const PerfCurve& p, double p_rand, double p_single);

// Average drop from each task's score at the end of its own training window
// to its score at the end of the whole run. Curves are indexed by task in
// training order; task i trains during ((i)N, (i+1)N] with N steps per task.
// Positive means performance was lost after moving on.
double forgetting(const std::vector<PerfCurve>& q, int64_t steps_per_task);

struct TransferResult {
  double forward_transfer = 0.0;  // mean of per_task
  std::vector<double> per_task;   // one component per included task
  std::vector<int> excluded;      // task indices dropped from the average
  std::vector<std::string> warnings;
};

// Relative gain of each task's training window over a from-scratch run of the
// same task: (S - S_single) / S_single, where S is the gap-weighted mean of
// the normalized curve over the task's own window and S_single is the same
// mean for the single-task baseline over (0, N]. Tasks whose baseline window
// mean is zero carry no scale to compare against and are excluded with a
// warning; at least one task must survive.
TransferResult forward_transfer(const std::vector<PerfCurve>& q_cl,
                                const std::vector<PerfCurve>& q_single,
                                int64_t steps_per_task);

struct Quartiles {
  double q25 = 0.0;
  double median = 0.0;
  double q75 = 0.0;
};

// Median and quartiles with linear interpolation between order statistics at
// fractional rank p * (n - 1). A single value is its own median and quartiles.
Quartiles quartiles(std::vector<double> values);

struct SuiteMetrics {
  std::vector<PerfCurve> q;  // normalized per-task curves; excluded ones empty
  double forgetting = 0.0;
  double forward_transfer = 0.0;
  std::vector<double> ft_components;  // one per task kept in forward_transfer
  std::vector<int> excluded_tasks;    // degenerate baseline or zero transfer base
  std::vector<std::string> warnings;
  // Per-task components aligned to task index; NaN marks an excluded task.
  std::vector<double> task_forgetting;
  std::vector<double> task_transfer;
};

// Normalizes raw curves with per-task baselines, then computes both averages
// over the tasks whose baselines are usable. p_rand and p_single hold one
// scalar per task; a task with p_single equal to p_rand cannot be normalized
// and is excluded from every average with a warning.
SuiteMetrics compute_suite_metrics(const std::vector<PerfCurve>& raw_cl,
                                   const std::vector<PerfCurve>& raw_single,
                                   const std::vector<double>& p_rand,
                                   const std::vector<double>& p_single,
                                   int64_t steps_per_task);

}  // namespace wmar
