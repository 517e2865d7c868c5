#include <atomic>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>
#include <thread>
#include <vector>

#include "CLI11.hpp"
#include "wmar.h"

namespace {

int fail_with_last_error(int code) {
  std::fprintf(stderr, "error: %s\n", wmar_last_error());
  return code;
}

std::string get_field(const wmar_config* cfg, const char* key) {
  char* value = nullptr;
  if (wmar_config_get(cfg, key, &value) != WMAR_OK) return "";
  std::string out = value ? value : "";
  wmar_string_free(value);
  return out;
}

// --mode/--seeds are sugar for --set; the dedicated flags win by coming last.
std::vector<std::string> collect_overrides(const std::vector<std::string>& sets,
                                           const std::string& mode, const std::string& seeds) {
  std::vector<std::string> out = sets;
  if (!mode.empty()) out.push_back("run.mode=" + mode);
  if (!seeds.empty()) out.push_back("run.seeds=" + seeds);
  return out;
}

int load_config(const std::string& path, const std::vector<std::string>& overrides,
                wmar_config** out) {
  std::vector<const char*> ptrs;
  for (const std::string& s : overrides) ptrs.push_back(s.c_str());
  return wmar_config_load(path.c_str(), ptrs.data(), ptrs.size(), out);
}

int cmd_run(const std::string& config_path, const std::vector<std::string>& overrides,
            std::string out_root, int jobs, bool resume) {
  wmar_config* cfg = nullptr;
  int rc = load_config(config_path, overrides, &cfg);
  if (rc != WMAR_OK) return fail_with_last_error(rc);

  if (out_root.empty()) {
    const char* env = std::getenv("WMAR_OUTPUT_ROOT");
    if (env && *env) out_root = env;
  }
  if (out_root.empty()) out_root = get_field(cfg, "run.out");

  size_t seed_count = 0;
  if ((rc = wmar_config_seeds(cfg, nullptr, 0, &seed_count)) != WMAR_OK) {
    wmar_config_free(cfg);
    return fail_with_last_error(rc);
  }
  std::vector<uint64_t> seeds(seed_count);
  wmar_config_seeds(cfg, seeds.data(), seeds.size(), &seed_count);

  const std::string suite = get_field(cfg, "run.suite");
  std::string arm = get_field(cfg, "run.mode");
  if (arm == "single_task") arm += get_field(cfg, "run.task_index");

  struct SeedOutcome {
    int rc = 0;
    std::string message;
    std::string dir;
  };
  std::vector<SeedOutcome> outcomes(seeds.size());
  std::atomic<size_t> cursor{0};
  auto worker = [&] {
    for (size_t i; (i = cursor.fetch_add(1)) < seeds.size();) {
      const std::string dir =
          out_root + "/" + suite + "/" + arm + "/seed" + std::to_string(seeds[i]);
      const int run_rc = wmar_run(cfg, seeds[i], dir.c_str(), resume ? 1 : 0);
      outcomes[i] = {run_rc, run_rc == WMAR_OK ? "" : wmar_last_error(), dir};
    }
  };
  const size_t thread_count =
      std::min<size_t>(std::max(jobs, 1), std::max<size_t>(seeds.size(), 1));
  std::vector<std::thread> pool;
  for (size_t i = 0; i + 1 < thread_count; ++i) pool.emplace_back(worker);
  worker();
  for (std::thread& t : pool) t.join();

  int exit_code = 0;
  for (size_t i = 0; i < seeds.size(); ++i) {
    const SeedOutcome& o = outcomes[i];
    if (o.rc == WMAR_OK) {
      std::printf("seed %llu: ok -> %s\n", static_cast<unsigned long long>(seeds[i]),
                  o.dir.c_str());
    } else {
      std::fprintf(stderr, "seed %llu: failed: %s\n",
                   static_cast<unsigned long long>(seeds[i]), o.message.c_str());
      exit_code = std::max(exit_code, o.rc);
    }
  }
  wmar_config_free(cfg);
  return exit_code;
}

int cmd_eval(const std::vector<std::string>& roots, const std::string& out_dir, bool force) {
  std::vector<const char*> ptrs;
  for (const std::string& r : roots) ptrs.push_back(r.c_str());
  char* warnings = nullptr;
  const int rc = wmar_eval(ptrs.data(), ptrs.size(), out_dir.c_str(), force ? 1 : 0, &warnings);
  if (rc != WMAR_OK) return fail_with_last_error(rc);
  if (warnings && *warnings) std::fprintf(stderr, "%s\n", warnings);
  wmar_string_free(warnings);

  std::ifstream summary(out_dir + "/summary.csv");
  std::stringstream body;
  body << summary.rdbuf();
  std::printf("%s", body.str().c_str());
  std::printf("wrote %s/summary.csv, components.csv, curves.csv\n", out_dir.c_str());
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"world-model continual-learning experiments"};
  app.set_version_flag("--version", wmar_version());
  app.require_subcommand(1);

  auto* run = app.add_subcommand("run", "train the configured experiment, one run per seed");
  std::string run_config, run_mode, run_seeds, run_out;
  std::vector<std::string> run_sets;
  int run_jobs = 1;
  bool run_resume = false;
  run->add_option("--config", run_config, "experiment config file")->required();
  run->add_option("--mode", run_mode, "override run.mode");
  run->add_option("--seeds", run_seeds, "override run.seeds, comma-separated");
  run->add_option("--set", run_sets, "key=value override, repeatable");
  run->add_option("--out", run_out, "output root (default: WMAR_OUTPUT_ROOT, then run.out)");
  run->add_option("--jobs", run_jobs, "worker threads, one seed each")
      ->check(CLI::PositiveNumber);
  run->add_flag("--resume", run_resume, "continue from existing checkpoints");

  auto* ev = app.add_subcommand("eval", "pair runs with baselines and write metric tables");
  std::vector<std::string> ev_cl, ev_single, ev_random;
  std::string ev_out = "eval";
  bool ev_force = false;
  ev->add_option("--cl", ev_cl, "roots holding continual runs");
  ev->add_option("--single", ev_single, "roots holding single-task baselines");
  ev->add_option("--random", ev_random, "roots holding random-policy baselines");
  ev->add_option("--out", ev_out, "output directory");
  ev->add_flag("--force", ev_force, "ignore experiment identity mismatches");

  auto* ch = app.add_subcommand("chart", "render learning-curve SVGs from a curves CSV");
  std::string ch_csv, ch_out;
  ch->add_option("csv", ch_csv, "curves.csv written by eval")->required();
  ch->add_option("--out", ch_out, "output directory (default: beside the CSV)");

  auto* vc = app.add_subcommand("validate-config", "check a config and print canonical form");
  std::string vc_config;
  std::vector<std::string> vc_sets;
  vc->add_option("config", vc_config, "experiment config file")->required();
  vc->add_option("--set", vc_sets, "key=value override, repeatable");

  auto* gc = app.add_subcommand("grad-check", "run the finite-difference gradient suite");
  uint64_t gc_seed = 42;
  gc->add_option("--seed", gc_seed, "suite seed");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : 2;  // usage problems are configuration problems
  }

  if (run->parsed())
    return cmd_run(run_config, collect_overrides(run_sets, run_mode, run_seeds), run_out,
                   run_jobs, run_resume);

  if (ev->parsed()) {
    std::vector<std::string> roots;
    for (const auto* list : {&ev_cl, &ev_single, &ev_random})
      roots.insert(roots.end(), list->begin(), list->end());
    if (roots.empty()) {
      std::fprintf(stderr, "error: eval needs at least one of --cl/--single/--random\n");
      return 2;
    }
    return cmd_eval(roots, ev_out, ev_force);
  }

  if (ch->parsed()) {
    if (ch_out.empty()) {
      const auto parent = std::filesystem::path(ch_csv).parent_path();
      ch_out = parent.empty() ? "." : parent.string();
    }
    const int rc = wmar_chart(ch_csv.c_str(), ch_out.c_str());
    if (rc != WMAR_OK) return fail_with_last_error(rc);
    std::printf("charts written to %s\n", ch_out.c_str());
    return 0;
  }

  if (vc->parsed()) {
    wmar_config* cfg = nullptr;
    const int rc = load_config(vc_config, vc_sets, &cfg);
    if (rc != WMAR_OK) return fail_with_last_error(rc);
    char* text = nullptr;
    wmar_config_text(cfg, &text);
    std::printf("%s", text ? text : "");
    wmar_string_free(text);
    uint64_t run_hash = 0, exp_hash = 0;
    wmar_config_hash(cfg, &run_hash, &exp_hash);
    std::printf("# config_hash: %016llx\n# experiment_hash: %016llx\n",
                static_cast<unsigned long long>(run_hash),
                static_cast<unsigned long long>(exp_hash));
    wmar_config_free(cfg);
    return 0;
  }

  if (gc->parsed()) {
    char* report = nullptr;
    const int rc = wmar_grad_check(gc_seed, &report);
    if (report) std::printf("%s", report);
    wmar_string_free(report);
    if (rc != WMAR_OK) std::fprintf(stderr, "error: %s\n", wmar_last_error());
    return rc;
  }

  return 2;
}
