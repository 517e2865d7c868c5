#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "wmar/trainer.hpp"

namespace wmar {

// A run loaded back from disk: the manifest identity fields plus the parsed
// evaluation rows.
struct LoadedRun {
  std::string dir;
  std::string suite;
  std::string suite_hash;
  std::string config_hash;
  std::string experiment_hash;
  std::string mode;
  uint64_t seed = 0;
  int64_t global_steps = 0;
  bool completed = false;
  int64_t steps_per_task = 0;
  int64_t eval_interval = 0;
  int64_t eval_episodes = 0;
  int task_count = 0;
  int task_index = -1;
  std::vector<EvalRow> rows;
};

LoadedRun load_run_dir(const std::string& dir);

// Every directory at or below root that holds a manifest.json, sorted.
std::vector<std::string> find_run_dirs(const std::string& root);

struct EvalTables {
  std::string summary_csv;     // one row per model: quartiles over seeds
  std::string components_csv;  // one row per model x seed x task
  std::string curves_csv;      // normalized continual curves for charting
  std::vector<std::string> warnings;
};

// Pools every run found under the given roots, classifies them by mode, and
// pairs each continual run (wmar / fifo_only) with same-seed single-task and
// random-policy baselines. Throws RuntimeError with a descriptive message on
// missing or incompatible artifacts; `force` relaxes only the experiment
// identity check, never suite or budget agreement.
EvalTables evaluate_runs(const std::vector<std::string>& roots, bool force = false);

// Writes summary.csv, components.csv, and curves.csv under out_dir.
void write_eval_tables(const EvalTables& t, const std::string& out_dir);

}  // namespace wmar
