#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "wmar/config.hpp"
#include "wmar/evalkit.hpp"

namespace wmar {

// One recorded evaluation episode. Rewards are raw task units, never scaled;
// task_trained is the task whose training window the step falls in, -1 for
// the evaluation taken before any training.
struct EvalRow {
  int64_t global_step = 0;
  int task_trained = -1;
  int eval_task = 0;
  double episodic_reward = 0.0;
};

struct RunRecord {
  std::vector<PerfCurve> curves;  // per suite task: median episodic reward
  std::vector<EvalRow> rows;
  uint64_t seed = 0;
  std::string config_hash;
  int64_t global_steps = 0;       // environment steps consumed by collection
  int64_t peak_stored_steps = 0;  // replay high-water mark
  int64_t memory_bound_steps = 0;
  bool completed = false;  // false when stopped by run.stop_after_global_steps
  double wall_seconds = 0.0;
  std::string run_dir;
};

// Runs one seed of the configured experiment. Artifacts land in out_dir:
// config.cfg (canonical snapshot), metrics.csv, manifest.json, and
// checkpoint.bin holding every piece of mutable state. With resume = true an
// existing checkpoint is loaded and the run continues; the finished artifacts
// are then byte-identical to an uninterrupted run. A non-finite training loss
// aborts with NumericsError after persisting crash.bin.
RunRecord run_experiment(const ExperimentConfig& cfg, uint64_t seed, const std::string& out_dir,
                         bool resume = false);

// CSV with header global_step,task_trained,eval_task,episodic_reward.
std::string metrics_csv_text(const std::vector<EvalRow>& rows);
std::vector<EvalRow> parse_metrics_csv(const std::string& text);

// Median-per-evaluation-point curves, one per suite task, in row order.
std::vector<PerfCurve> curves_from_rows(const std::vector<EvalRow>& rows, int task_count);

}  // namespace wmar
