#include <sys/wait.h>

#include <cstdlib>
#include <fstream>
#include <sstream>
#include <string>

#include "doctest.h"
#include "wmar/fsutil.hpp"
#include "wmar/version.hpp"

namespace {

struct CliResult {
  int code = -1;
  std::string out;
  std::string err;
};

std::string slurp(const std::string& path) {
  std::ifstream in(path);
  std::stringstream body;
  body << in.rdbuf();
  return body.str();
}

CliResult run_cli(const std::string& args) {
  static int counter = 0;
  wmar::make_dirs("wmar_test_runs");
  const std::string tag = std::to_string(counter++);
  const std::string out_path = "wmar_test_runs/cli_stdout_" + tag;
  const std::string err_path = "wmar_test_runs/cli_stderr_" + tag;
  const std::string cmd =
      std::string(WMAR_CLI_PATH) + " " + args + " > " + out_path + " 2> " + err_path;
  const int status = std::system(cmd.c_str());
  CliResult r;
  r.code = WIFEXITED(status) ? WEXITSTATUS(status) : -1;
  r.out = slurp(out_path);
  r.err = slurp(err_path);
  return r;
}

const char* kTinyConfig =
    "run.suite = shared4\n"
    "run.mode = wmar\n"
    "run.seeds = 1\n"
    "budget.steps_per_task = 200\n"
    "budget.steps_per_iteration = 50\n"
    "budget.train_ratio = 0.1\n"
    "budget.prefill_steps = 50\n"
    "budget.eval_interval = 100\n"
    "budget.eval_episodes = 2\n"
    "replay.chunk_size = 16\n"
    "replay.fifo_steps = 128\n"
    "replay.ltdm_chunks = 8\n"
    "wm.latent_units = 2\n"
    "wm.latent_classes = 4\n"
    "wm.deter_width = 16\n"
    "wm.embed_width = 8\n"
    "wm.hidden_width = 16\n"
    "wm.hidden_layers = 1\n"
    "agent.gamma = 0.9\n"
    "agent.horizon = 4\n"
    "agent.hidden_width = 16\n"
    "agent.hidden_layers = 1\n"
    "train.batch_size = 4\n"
    "train.batch_length = 8\n"
    "train.dream_starts = 8\n";

std::string tiny_config_path() {
  wmar::make_dirs("wmar_test_runs");
  const std::string path = "wmar_test_runs/cli_tiny.cfg";
  wmar::atomic_write_file(path, kTinyConfig);
  return path;
}

}  // namespace

TEST_CASE("cli reports version and rejects missing subcommands") {
  const CliResult version = run_cli("--version");
  CHECK(version.code == 0);
  CHECK(version.out.find(wmar::kVersion) != std::string::npos);

  CHECK(run_cli("").code == 2);
  CHECK(run_cli("frobnicate").code == 2);
}

TEST_CASE("cli validates configs and prints hashes") {
  const std::string cfg = tiny_config_path();
  const CliResult ok = run_cli("validate-config " + cfg);
  CHECK(ok.code == 0);
  CHECK(ok.out.find("run.suite = shared4") != std::string::npos);
  CHECK(ok.out.find("budget.steps_per_task = 200") != std::string::npos);
  CHECK(ok.out.find("# config_hash: ") != std::string::npos);
  CHECK(ok.out.find("# experiment_hash: ") != std::string::npos);

  const CliResult bad = run_cli("validate-config " + cfg + " --set budget.steps_per_task=123");
  CHECK(bad.code == 2);
  CHECK(bad.err.find("error:") != std::string::npos);

  CHECK(run_cli("validate-config wmar_test_runs/absent.cfg").code == 1);
}

TEST_CASE("cli grad-check prints the suite report") {
  const CliResult r = run_cli("grad-check --seed 42");
  CHECK(r.code == 0);
  CHECK(r.out.find("world_model_loss") != std::string::npos);
  CHECK(r.out.find("all gradients match") != std::string::npos);
}

TEST_CASE("cli run produces per-seed artifact directories") {
  const std::string cfg = tiny_config_path();
  const std::string root = "wmar_test_runs/cli_run_root";
  std::system(("rm -rf " + root).c_str());
  const CliResult r = run_cli("run --config " + cfg + " --out " + root);
  CHECK(r.code == 0);
  CHECK(r.out.find("seed 1: ok") != std::string::npos);
  const std::string dir = root + "/shared4/wmar/seed1";
  CHECK(wmar::file_exists(dir + "/manifest.json"));
  CHECK(wmar::file_exists(dir + "/metrics.csv"));
  CHECK(wmar::file_exists(dir + "/checkpoint.bin"));
}

TEST_CASE("cli run honors seed overrides jobs and the env root") {
  const std::string cfg = tiny_config_path();
  const std::string root = "wmar_test_runs/cli_run_jobs";
  std::system(("rm -rf " + root).c_str());
  const CliResult r =
      run_cli("run --config " + cfg + " --seeds 2,3 --jobs 2 --out " + root);
  CHECK(r.code == 0);
  CHECK(wmar::file_exists(root + "/shared4/wmar/seed2/manifest.json"));
  CHECK(wmar::file_exists(root + "/shared4/wmar/seed3/manifest.json"));

  const std::string env_root = "wmar_test_runs/cli_env_root";
  std::system(("rm -rf " + env_root).c_str());
  const CliResult env_run = run_cli("run --config " + cfg + " --mode single_task --set "
                                    "run.task_index=2 --out " + env_root);
  CHECK(env_run.code == 0);
  CHECK(wmar::file_exists(env_root + "/shared4/single_task2/seed1/manifest.json"));
}

TEST_CASE("cli run env var supplies the output root") {
  const std::string cfg = tiny_config_path();
  const std::string env_root = "wmar_test_runs/cli_envvar_root";
  std::system(("rm -rf " + env_root).c_str());
  const std::string out_path = "wmar_test_runs/cli_envvar_stdout";
  const std::string cmd = "WMAR_OUTPUT_ROOT=" + env_root + " " + WMAR_CLI_PATH +
                          " run --config " + cfg + " --mode random > " + out_path + " 2>&1";
  const int status = std::system(cmd.c_str());
  CHECK(WIFEXITED(status));
  CHECK(WEXITSTATUS(status) == 0);
  CHECK(wmar::file_exists(env_root + "/shared4/random/seed1/manifest.json"));
}

TEST_CASE("cli run rejects bad configuration with exit 2") {
  const std::string cfg = tiny_config_path();
  CHECK(run_cli("run --config " + cfg + " --set budget.steps_per_tusk=1 --out "
                "wmar_test_runs/cli_never").code == 2);
  CHECK(run_cli("run --config wmar_test_runs/absent.cfg").code == 1);
}

TEST_CASE("cli chart and eval surface their failure modes") {
  const std::string bad_csv = "wmar_test_runs/cli_bad_curves.csv";
  wmar::atomic_write_file(bad_csv, "nope\n");
  CHECK(run_cli("chart " + bad_csv).code == 1);
  CHECK(run_cli("chart wmar_test_runs/absent.csv").code == 1);

  std::string csv = "model,seed,task,task_label,global_step,score,steps_per_task,task_count\n";
  csv += "wmar,1,0,alpha,0,0,100,1\n";
  csv += "wmar,1,0,alpha,100,1,100,1\n";
  const std::string good_csv = "wmar_test_runs/cli_curves.csv";
  wmar::atomic_write_file(good_csv, csv);
  const std::string chart_out = "wmar_test_runs/cli_chart_out";
  std::system(("rm -rf " + chart_out).c_str());
  const CliResult ch = run_cli("chart " + good_csv + " --out " + chart_out);
  CHECK(ch.code == 0);
  CHECK(wmar::file_exists(chart_out + "/chart_wmar.svg"));

  CHECK(run_cli("eval --out wmar_test_runs/cli_eval_out").code == 2);
  const CliResult ev = run_cli("eval --cl wmar_test_runs/cli_no_such_root");
  CHECK(ev.code == 1);
  CHECK(ev.err.find("no such directory") != std::string::npos);
}
