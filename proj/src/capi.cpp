#include "wmar.h"

#include <cstdlib>
#include <cstring>
#include <string>
#include <vector>

#include "wmar/chart.hpp"
#include "wmar/config.hpp"
#include "wmar/errors.hpp"
#include "wmar/fsutil.hpp"
#include "wmar/gradsuite.hpp"
#include "wmar/report.hpp"
#include "wmar/trainer.hpp"
#include "wmar/version.hpp"

struct wmar_config {
  wmar::ExperimentConfig cfg;
};

namespace {

thread_local std::string g_last_error;

// malloc-backed copy so C callers pair it with wmar_string_free / free.
char* dup_string(const std::string& s) {
  char* out = static_cast<char*>(std::malloc(s.size() + 1));
  if (out) std::memcpy(out, s.c_str(), s.size() + 1);
  return out;
}

template <typename Fn>
int guarded(Fn&& fn) {
  try {
    fn();
    g_last_error.clear();
    return WMAR_OK;
  } catch (const wmar::ConfigError& e) {
    g_last_error = e.what();
    return WMAR_ERR_CONFIG;
  } catch (const std::exception& e) {
    g_last_error = e.what();
    return WMAR_ERR_RUNTIME;
  }
}

int null_argument(const char* which) {
  g_last_error = std::string("null argument: ") + which;
  return WMAR_ERR_RUNTIME;
}

}  // namespace

extern "C" {

const char* wmar_version(void) { return wmar::kVersion; }

const char* wmar_last_error(void) { return g_last_error.c_str(); }

void wmar_string_free(char* s) { std::free(s); }

int wmar_config_load(const char* path, const char* const* overrides, size_t n_overrides,
                     wmar_config** out) {
  if (!path) return null_argument("path");
  if (!out) return null_argument("out");
  if (n_overrides > 0 && !overrides) return null_argument("overrides");
  *out = nullptr;
  return guarded([&] {
    wmar::ExperimentConfig cfg = wmar::load_config_file(path);
    for (size_t i = 0; i < n_overrides; ++i) {
      const std::string text = overrides[i] ? overrides[i] : "";
      const size_t eq = text.find('=');
      if (eq == std::string::npos)
        throw wmar::ConfigError("override must be key=value, got \"" + text + "\"");
      wmar::apply_override(cfg, text.substr(0, eq), text.substr(eq + 1));
    }
    cfg.validate();
    *out = new wmar_config{std::move(cfg)};
  });
}

int wmar_config_validate(const wmar_config* cfg) {
  if (!cfg) return null_argument("cfg");
  return guarded([&] { cfg->cfg.validate(); });
}

int wmar_config_set(wmar_config* cfg, const char* key, const char* value) {
  if (!cfg) return null_argument("cfg");
  if (!key) return null_argument("key");
  if (!value) return null_argument("value");
  return guarded([&] { wmar::apply_override(cfg->cfg, key, value); });
}

int wmar_config_text(const wmar_config* cfg, char** out) {
  if (!cfg) return null_argument("cfg");
  if (!out) return null_argument("out");
  return guarded([&] { *out = dup_string(wmar::config_to_text(cfg->cfg)); });
}

int wmar_config_get(const wmar_config* cfg, const char* key, char** out) {
  if (!cfg) return null_argument("cfg");
  if (!key) return null_argument("key");
  if (!out) return null_argument("out");
  return guarded([&] { *out = dup_string(wmar::config_field_text(cfg->cfg, key)); });
}

int wmar_config_seeds(const wmar_config* cfg, uint64_t* out, size_t cap, size_t* count) {
  if (!cfg) return null_argument("cfg");
  if (!count) return null_argument("count");
  return guarded([&] {
    const std::vector<uint64_t> seeds = cfg->cfg.seed_list();
    *count = seeds.size();
    if (out)
      for (size_t i = 0; i < seeds.size() && i < cap; ++i) out[i] = seeds[i];
  });
}

int wmar_config_hash(const wmar_config* cfg, uint64_t* run_hash, uint64_t* experiment_hash) {
  if (!cfg) return null_argument("cfg");
  return guarded([&] {
    if (run_hash) *run_hash = wmar::config_hash(cfg->cfg);
    if (experiment_hash) *experiment_hash = wmar::experiment_hash(cfg->cfg);
  });
}

void wmar_config_free(wmar_config* cfg) { delete cfg; }

int wmar_run(const wmar_config* cfg, uint64_t seed, const char* out_dir, int resume) {
  if (!cfg) return null_argument("cfg");
  if (!out_dir) return null_argument("out_dir");
  return guarded([&] { wmar::run_experiment(cfg->cfg, seed, out_dir, resume != 0); });
}

int wmar_eval(const char* const* roots, size_t n_roots, const char* out_dir, int force,
              char** warnings) {
  if (!roots) return null_argument("roots");
  if (!out_dir) return null_argument("out_dir");
  if (warnings) *warnings = nullptr;
  return guarded([&] {
    std::vector<std::string> root_list;
    for (size_t i = 0; i < n_roots; ++i) root_list.push_back(roots[i] ? roots[i] : "");
    const wmar::EvalTables tables = wmar::evaluate_runs(root_list, force != 0);
    wmar::write_eval_tables(tables, out_dir);
    if (warnings) {
      std::string joined;
      for (const std::string& w : tables.warnings) {
        if (!joined.empty()) joined += "\n";
        joined += w;
      }
      *warnings = dup_string(joined);
    }
  });
}

int wmar_chart(const char* curves_csv_path, const char* out_dir) {
  if (!curves_csv_path) return null_argument("curves_csv_path");
  if (!out_dir) return null_argument("out_dir");
  return guarded(
      [&] { wmar::write_charts(wmar::read_text_file(curves_csv_path), out_dir); });
}

int wmar_grad_check(uint64_t seed, char** report) {
  if (!report) return null_argument("report");
  return guarded([&] {
    const wmar::GradSuiteResult r = wmar::run_grad_suite(seed);
    *report = dup_string(wmar::grad_suite_report(r));
    if (!r.ok) throw wmar::RuntimeError("gradient suite failed; see report");
  });
}

}  // extern "C"
