#ifndef WMAR_H
#define WMAR_H

/* C interface to the wmar shared library. Every entry point returns one of
 * the status codes below; on failure, wmar_last_error() holds a message for
 * the calling thread. Strings returned through char** out-parameters are
 * heap-allocated and released with wmar_string_free. */

#include <stddef.h>
#include <stdint.h>

#ifdef __cplusplus
extern "C" {
#endif

#define WMAR_OK 0
#define WMAR_ERR_RUNTIME 1 /* I/O, corrupt artifacts, numerical blow-up */
#define WMAR_ERR_CONFIG 2  /* bad key, bad value, inconsistent schema */

/* Opaque experiment configuration. */
typedef struct wmar_config wmar_config;

/* Static version string, never freed. */
const char* wmar_version(void);

/* Message from this thread's most recent failing call; empty until then.
 * Valid until the thread's next wmar call. */
const char* wmar_last_error(void);

void wmar_string_free(char* s);

/* Loads a config file, applies "section.key=value" overrides in order, and
 * validates the result. */
int wmar_config_load(const char* path, const char* const* overrides, size_t n_overrides,
                     wmar_config** out);

/* Re-validates after wmar_config_set calls. */
int wmar_config_validate(const wmar_config* cfg);

int wmar_config_set(wmar_config* cfg, const char* key, const char* value);

/* Canonical one-key-per-line text of the full configuration. */
int wmar_config_text(const wmar_config* cfg, char** out);

/* Canonical text of one field, e.g. "shared4" for "run.suite". Unknown keys
 * fail with WMAR_ERR_CONFIG. */
int wmar_config_get(const wmar_config* cfg, const char* key, char** out);

/* Copies the parsed run.seeds list into out (up to cap entries) and stores
 * the full count in *count; pass out = NULL to query the count alone. */
int wmar_config_seeds(const wmar_config* cfg, uint64_t* out, size_t cap, size_t* count);

/* run_hash gates checkpoint resume; experiment_hash identifies the
 * experiment across its continual/single-task/random arms. Either pointer
 * may be NULL. */
int wmar_config_hash(const wmar_config* cfg, uint64_t* run_hash, uint64_t* experiment_hash);

void wmar_config_free(wmar_config* cfg);

/* Runs one seed of the configured experiment; artifacts (config snapshot,
 * metrics CSV, manifest, checkpoint) land directly in out_dir. resume != 0
 * continues from out_dir's checkpoint. */
int wmar_run(const wmar_config* cfg, uint64_t seed, const char* out_dir, int resume);

/* Pools every run found under the given roots, pairs continual runs with
 * their same-seed baselines, and writes summary.csv, components.csv, and
 * curves.csv under out_dir. force != 0 relaxes the experiment identity
 * check (never suite or budget agreement). When warnings is non-NULL it
 * receives a newline-joined list, empty string when there were none. */
int wmar_eval(const char* const* roots, size_t n_roots, const char* out_dir, int force,
              char** warnings);

/* Renders one SVG chart per model from a curves.csv written by wmar_eval. */
int wmar_chart(const char* curves_csv_path, const char* out_dir);

/* Runs the finite-difference gradient suite and returns its report text.
 * Fails with WMAR_ERR_RUNTIME when any family exceeds its threshold; the
 * report is returned either way. */
int wmar_grad_check(uint64_t seed, char** report);

#ifdef __cplusplus
}
#endif

#endif /* WMAR_H */
