#include "wmar.h"

#include <filesystem>
#include <string>

#include "doctest.h"
#include "wmar/fsutil.hpp"
#include "wmar/version.hpp"

namespace {

// Desk-sized budget so the round trip through the C surface stays quick.
const char* kTinyConfig =
    "run.suite = shared4\n"
    "run.mode = wmar\n"
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

std::string write_tiny_config(const std::string& name) {
  wmar::make_dirs("wmar_test_runs");
  const std::string path = "wmar_test_runs/" + name;
  wmar::atomic_write_file(path, kTinyConfig);
  return path;
}

}  // namespace

TEST_CASE("c api reports version and clean error state") {
  REQUIRE(wmar_version() != nullptr);
  CHECK(std::string(wmar_version()) == wmar::kVersion);
  wmar_string_free(nullptr);  // must be a no-op
  wmar_config_free(nullptr);
}

TEST_CASE("c api loads validates and hashes a config") {
  const std::string path = write_tiny_config("capi_ok.cfg");
  wmar_config* cfg = nullptr;
  REQUIRE(wmar_config_load(path.c_str(), nullptr, 0, &cfg) == WMAR_OK);
  REQUIRE(cfg != nullptr);
  CHECK(wmar_config_validate(cfg) == WMAR_OK);

  char* text = nullptr;
  REQUIRE(wmar_config_text(cfg, &text) == WMAR_OK);
  REQUIRE(text != nullptr);
  const std::string body(text);
  wmar_string_free(text);
  CHECK(body.find("run.suite = shared4") != std::string::npos);
  CHECK(body.find("budget.steps_per_task = 200") != std::string::npos);

  uint64_t run_hash = 0, exp_hash = 0;
  REQUIRE(wmar_config_hash(cfg, &run_hash, &exp_hash) == WMAR_OK);
  CHECK(run_hash != 0);
  CHECK(exp_hash != 0);

  // Flipping the arm selector moves the run hash but not the experiment hash.
  REQUIRE(wmar_config_set(cfg, "run.mode", "random") == WMAR_OK);
  uint64_t run_hash2 = 0, exp_hash2 = 0;
  REQUIRE(wmar_config_hash(cfg, &run_hash2, &exp_hash2) == WMAR_OK);
  CHECK(run_hash2 != run_hash);
  CHECK(exp_hash2 == exp_hash);

  wmar_config_free(cfg);
}

TEST_CASE("c api maps config failures to code 2 with messages") {
  const std::string path = write_tiny_config("capi_bad.cfg");
  wmar_config* cfg = nullptr;

  const char* bad_key[] = {"budget.steps_per_tusk=1"};
  CHECK(wmar_config_load(path.c_str(), bad_key, 1, &cfg) == WMAR_ERR_CONFIG);
  CHECK(cfg == nullptr);
  CHECK(std::string(wmar_last_error()).find("steps_per_tusk") != std::string::npos);

  const char* no_eq[] = {"budget.steps_per_task"};
  CHECK(wmar_config_load(path.c_str(), no_eq, 1, &cfg) == WMAR_ERR_CONFIG);
  CHECK(std::string(wmar_last_error()).find("key=value") != std::string::npos);

  // Value that parses but breaks validation: budget not iteration-divisible.
  const char* bad_budget[] = {"budget.steps_per_task=123"};
  CHECK(wmar_config_load(path.c_str(), bad_budget, 1, &cfg) == WMAR_ERR_CONFIG);

  CHECK(wmar_config_load("wmar_test_runs/absent.cfg", nullptr, 0, &cfg) == WMAR_ERR_RUNTIME);
  CHECK(std::string(wmar_last_error()).find("absent.cfg") != std::string::npos);

  CHECK(wmar_config_load(nullptr, nullptr, 0, &cfg) == WMAR_ERR_RUNTIME);
  CHECK(std::string(wmar_last_error()).find("null argument") != std::string::npos);
}

TEST_CASE("c api runs a seed end to end") {
  const std::string path = write_tiny_config("capi_run.cfg");
  wmar_config* cfg = nullptr;
  REQUIRE(wmar_config_load(path.c_str(), nullptr, 0, &cfg) == WMAR_OK);
  const std::string out = "wmar_test_runs/capi_run_out";
  std::filesystem::remove_all(out);
  REQUIRE(wmar_run(cfg, 1, out.c_str(), 0) == WMAR_OK);
  CHECK(wmar::file_exists(out + "/manifest.json"));
  CHECK(wmar::file_exists(out + "/metrics.csv"));
  CHECK(wmar::file_exists(out + "/checkpoint.bin"));
  CHECK(wmar::file_exists(out + "/config.cfg"));
  wmar_config_free(cfg);
}

TEST_CASE("c api surfaces eval and chart failures") {
  const char* roots[] = {"wmar_test_runs/no_such_root"};
  char* warnings = nullptr;
  CHECK(wmar_eval(roots, 1, "wmar_test_runs/capi_eval_out", 0, &warnings) == WMAR_ERR_RUNTIME);
  CHECK(warnings == nullptr);
  CHECK(std::string(wmar_last_error()).find("no such directory") != std::string::npos);

  CHECK(wmar_chart("wmar_test_runs/no_such.csv", "wmar_test_runs/capi_chart_out") ==
        WMAR_ERR_RUNTIME);

  const std::string bad_csv = "wmar_test_runs/capi_bad_curves.csv";
  wmar::atomic_write_file(bad_csv, "not,a,curves,header\n");
  CHECK(wmar_chart(bad_csv.c_str(), "wmar_test_runs/capi_chart_out") == WMAR_ERR_RUNTIME);
  CHECK(std::string(wmar_last_error()).find("malformed") != std::string::npos);
}

TEST_CASE("c api renders charts from a curves file") {
  const std::string csv_path = "wmar_test_runs/capi_curves.csv";
  std::string csv = "model,seed,task,task_label,global_step,score,steps_per_task,task_count\n";
  csv += "wmar,1,0,alpha,0,0,100,1\n";
  csv += "wmar,1,0,alpha,100,1,100,1\n";
  wmar::atomic_write_file(csv_path, csv);
  const std::string out = "wmar_test_runs/capi_chart_ok";
  std::filesystem::remove_all(out);
  REQUIRE(wmar_chart(csv_path.c_str(), out.c_str()) == WMAR_OK);
  CHECK(wmar::file_exists(out + "/chart_wmar.svg"));
}

TEST_CASE("c api gradient check returns the report") {
  char* report = nullptr;
  REQUIRE(wmar_grad_check(42, &report) == WMAR_OK);
  REQUIRE(report != nullptr);
  const std::string text(report);
  wmar_string_free(report);
  CHECK(text.find("world_model_loss") != std::string::npos);
  CHECK(text.find("all gradients match") != std::string::npos);
  CHECK(wmar_grad_check(42, nullptr) == WMAR_ERR_RUNTIME);
}
