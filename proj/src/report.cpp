#include "wmar/report.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <map>
#include <set>

#include "json.hpp"
#include "wmar/envs.hpp"
#include "wmar/errors.hpp"
#include "wmar/fsutil.hpp"

namespace wmar {

namespace {

namespace fs = std::filesystem;

std::string fmt_double(double v) {
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

// Empty cell for an excluded task, so the column stays numeric elsewhere.
std::string fmt_cell(double v) { return std::isnan(v) ? std::string() : fmt_double(v); }

struct SeedResult {
  uint64_t seed = 0;
  SuiteMetrics metrics;
};

void check_same_budget(const LoadedRun& a, const LoadedRun& b) {
  const auto differ = [&](const char* what, int64_t x, int64_t y) {
    if (x == y) return;
    throw RuntimeError("eval: budget mismatch between " + a.dir + " and " + b.dir + ": " + what +
                       " " + std::to_string(x) + " vs " + std::to_string(y));
  };
  differ("steps_per_task", a.steps_per_task, b.steps_per_task);
  differ("eval_interval", a.eval_interval, b.eval_interval);
  differ("eval_episodes", a.eval_episodes, b.eval_episodes);
  differ("task_count", a.task_count, b.task_count);
}

}  // namespace

LoadedRun load_run_dir(const std::string& dir) {
  const std::string manifest_path = path_join(dir, "manifest.json");
  if (!file_exists(manifest_path))
    throw RuntimeError("eval: no manifest.json in " + dir);
  LoadedRun run;
  run.dir = dir;
  try {
    const nlohmann::json j = nlohmann::json::parse(read_text_file(manifest_path));
    run.suite = j.at("suite").get<std::string>();
    run.suite_hash = j.at("suite_hash").get<std::string>();
    run.config_hash = j.at("config_hash").get<std::string>();
    run.experiment_hash = j.at("experiment_hash").get<std::string>();
    run.mode = j.at("mode").get<std::string>();
    run.seed = j.at("seed").get<uint64_t>();
    run.global_steps = j.at("global_steps").get<int64_t>();
    run.completed = j.at("completed").get<bool>();
    run.steps_per_task = j.at("steps_per_task").get<int64_t>();
    run.eval_interval = j.at("eval_interval").get<int64_t>();
    run.eval_episodes = j.at("eval_episodes").get<int64_t>();
    run.task_count = j.at("task_count").get<int>();
    run.task_index = j.at("task_index").get<int>();
  } catch (const nlohmann::json::exception& e) {
    throw RuntimeError("eval: bad manifest in " + dir + ": " + e.what());
  }
  run.rows = parse_metrics_csv(read_text_file(path_join(dir, "metrics.csv")));
  for (const EvalRow& r : run.rows)
    if (r.eval_task < 0 || r.eval_task >= run.task_count)
      throw RuntimeError("eval: " + dir + " has an evaluation row for task " +
                         std::to_string(r.eval_task) + " outside its declared suite");
  return run;
}

std::vector<std::string> find_run_dirs(const std::string& root) {
  if (!fs::exists(root)) throw RuntimeError("eval: no such directory: " + root);
  std::vector<std::string> dirs;
  if (fs::is_directory(root)) {
    for (const auto& entry : fs::recursive_directory_iterator(root))
      if (entry.is_regular_file() && entry.path().filename() == "manifest.json")
        dirs.push_back(entry.path().parent_path().string());
  }
  std::sort(dirs.begin(), dirs.end());
  return dirs;
}

EvalTables evaluate_runs(const std::vector<std::string>& roots, bool force) {
  if (roots.empty()) throw RuntimeError("eval: no run directories given");

  std::vector<LoadedRun> runs;
  std::set<std::string> seen;
  for (const std::string& root : roots) {
    const std::vector<std::string> dirs = find_run_dirs(root);
    if (dirs.empty()) throw RuntimeError("eval: no runs found under " + root);
    for (const std::string& dir : dirs) {
      const std::string key = fs::weakly_canonical(dir).string();
      if (!seen.insert(key).second) continue;
      runs.push_back(load_run_dir(dir));
    }
  }

  const LoadedRun& ref = runs.front();
  for (const LoadedRun& r : runs) {
    if (!r.completed)
      throw RuntimeError("eval: run " + r.dir +
                         " is incomplete; finish or resume it before evaluating");
    if (r.suite != ref.suite || r.suite_hash != ref.suite_hash)
      throw RuntimeError("eval: suite mismatch between " + ref.dir + " (" + ref.suite + ") and " +
                         r.dir + " (" + r.suite + ")");
    check_same_budget(ref, r);
    if (!force && r.experiment_hash != ref.experiment_hash)
      throw RuntimeError("eval: " + ref.dir + " and " + r.dir +
                         " come from different experiment configurations (hash " +
                         ref.experiment_hash + " vs " + r.experiment_hash +
                         "); pass --force to evaluate anyway");
  }

  // Classify by the mode the run itself declares.
  std::map<std::string, std::map<uint64_t, const LoadedRun*>> continual;  // mode -> seed
  std::map<uint64_t, const LoadedRun*> random_runs;                       // seed
  std::map<std::pair<int, uint64_t>, const LoadedRun*> single_runs;       // (task, seed)
  for (const LoadedRun& r : runs) {
    if (r.mode == "wmar" || r.mode == "fifo_only") {
      auto [it, fresh] = continual[r.mode].emplace(r.seed, &r);
      if (!fresh)
        throw RuntimeError("eval: duplicate " + r.mode + " run for seed " +
                           std::to_string(r.seed) + ": " + it->second->dir + " and " + r.dir);
    } else if (r.mode == "random") {
      auto [it, fresh] = random_runs.emplace(r.seed, &r);
      if (!fresh)
        throw RuntimeError("eval: duplicate random-policy run for seed " +
                           std::to_string(r.seed) + ": " + it->second->dir + " and " + r.dir);
    } else if (r.mode == "single_task") {
      auto [it, fresh] = single_runs.emplace(std::make_pair(r.task_index, r.seed), &r);
      if (!fresh)
        throw RuntimeError("eval: duplicate single-task run for task " +
                           std::to_string(r.task_index) + " seed " + std::to_string(r.seed) +
                           ": " + it->second->dir + " and " + r.dir);
    } else {
      throw RuntimeError("eval: run " + r.dir + " has unknown mode \"" + r.mode + "\"");
    }
  }
  if (continual.empty())
    throw RuntimeError("eval: no continual runs (mode wmar or fifo_only) under the given roots");

  const SuiteSpec spec = suite_spec(ref.suite);
  const int tasks = ref.task_count;
  const int64_t n = ref.steps_per_task;

  // Tables are emitted wmar first so the main method leads the ablation.
  std::vector<std::string> model_order;
  if (continual.count("wmar")) model_order.push_back("wmar");
  if (continual.count("fifo_only")) model_order.push_back("fifo_only");

  EvalTables tables;
  std::string components = "model,seed,task,task_label,forgetting,fwd_transfer,excluded\n";
  std::string curves =
      "model,seed,task,task_label,global_step,score,steps_per_task,task_count\n";
  std::string summary =
      "model,seeds,forgetting_q25,forgetting_median,forgetting_q75,"
      "fwd_transfer_q25,fwd_transfer_median,fwd_transfer_q75\n";

  for (const std::string& model : model_order) {
    std::vector<SeedResult> per_seed;
    for (const auto& [seed, cl] : continual.at(model)) {
      if (cl->global_steps != n * tasks)
        throw RuntimeError("eval: continual run " + cl->dir + " covers " +
                           std::to_string(cl->global_steps) + " steps, expected " +
                           std::to_string(n * tasks));

      const auto rand_it = random_runs.find(seed);
      if (rand_it == random_runs.end())
        throw RuntimeError("eval: no random-policy baseline for seed " + std::to_string(seed) +
                           " (needed by " + model + " run " + cl->dir + ")");
      const std::vector<PerfCurve> rand_curves = curves_from_rows(rand_it->second->rows, tasks);

      std::vector<PerfCurve> single_curves;
      std::vector<double> p_rand(tasks), p_single(tasks);
      for (int task = 0; task < tasks; ++task) {
        const auto single_it = single_runs.find(std::make_pair(task, seed));
        if (single_it == single_runs.end())
          throw RuntimeError("eval: no single-task baseline for task " + std::to_string(task) +
                             " (" + spec.task_labels[task] + ") at seed " + std::to_string(seed) +
                             " (needed by " + model + " run " + cl->dir + ")");
        const LoadedRun& st = *single_it->second;
        if (st.global_steps != n)
          throw RuntimeError("eval: single-task run " + st.dir + " trained " +
                             std::to_string(st.global_steps) + " steps, expected " +
                             std::to_string(n));
        PerfCurve curve = curves_from_rows(st.rows, tasks)[task];
        if (curve.empty() || rand_curves[task].empty())
          throw RuntimeError("eval: baseline for task " + std::to_string(task) + " at seed " +
                             std::to_string(seed) + " recorded no evaluations");
        p_rand[task] = rand_curves[task].at(0);
        p_single[task] = curve.at(curve.last_step());
        single_curves.push_back(std::move(curve));
      }

      const std::vector<PerfCurve> raw_cl = curves_from_rows(cl->rows, tasks);
      SeedResult sr;
      sr.seed = seed;
      sr.metrics = compute_suite_metrics(raw_cl, single_curves, p_rand, p_single, n);
      for (const std::string& w : sr.metrics.warnings)
        tables.warnings.push_back(model + " seed " + std::to_string(seed) + ": " + w);

      std::set<int> excluded(sr.metrics.excluded_tasks.begin(),
                             sr.metrics.excluded_tasks.end());
      for (int task = 0; task < tasks; ++task) {
        components += model + "," + std::to_string(seed) + "," + std::to_string(task) + "," +
                      spec.task_labels[task] + "," + fmt_cell(sr.metrics.task_forgetting[task]) +
                      "," + fmt_cell(sr.metrics.task_transfer[task]) + "," +
                      (excluded.count(task) ? "1" : "0") + "\n";
        if (excluded.count(task)) continue;
        const PerfCurve q = normalize_curve(raw_cl[task], p_rand[task], p_single[task]);
        for (size_t i = 0; i < q.steps().size(); ++i)
          curves += model + "," + std::to_string(seed) + "," + std::to_string(task) + "," +
                    spec.task_labels[task] + "," + std::to_string(q.steps()[i]) + "," +
                    fmt_double(q.values()[i]) + "," + std::to_string(n) + "," +
                    std::to_string(tasks) + "\n";
      }
      per_seed.push_back(std::move(sr));
    }

    std::vector<double> f_vals, ft_vals;
    for (const SeedResult& sr : per_seed) {
      f_vals.push_back(sr.metrics.forgetting);
      ft_vals.push_back(sr.metrics.forward_transfer);
    }
    const Quartiles fq = quartiles(f_vals);
    const Quartiles ftq = quartiles(ft_vals);
    summary += model + "," + std::to_string(per_seed.size()) + "," + fmt_double(fq.q25) + "," +
               fmt_double(fq.median) + "," + fmt_double(fq.q75) + "," + fmt_double(ftq.q25) +
               "," + fmt_double(ftq.median) + "," + fmt_double(ftq.q75) + "\n";
  }

  tables.summary_csv = std::move(summary);
  tables.components_csv = std::move(components);
  tables.curves_csv = std::move(curves);
  return tables;
}

void write_eval_tables(const EvalTables& t, const std::string& out_dir) {
  make_dirs(out_dir);
  atomic_write_file(path_join(out_dir, "summary.csv"), t.summary_csv);
  atomic_write_file(path_join(out_dir, "components.csv"), t.components_csv);
  atomic_write_file(path_join(out_dir, "curves.csv"), t.curves_csv);
}

}  // namespace wmar
