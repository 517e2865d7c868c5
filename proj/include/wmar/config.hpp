#pragma once

#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include "wmar/agent.hpp"
#include "wmar/envs.hpp"
#include "wmar/rssm.hpp"

namespace wmar {

// Full description of one experiment. Parsed from flat `key = value` text
// with dotted section names; every key is listed in docs/config.md. Unknown
// keys are configuration errors, both in files and in overrides.
struct ExperimentConfig {
  // run.*
  std::string suite = "shared4";
  std::string mode = "wmar";  // wmar | fifo_only | single_task | random
  int task_index = 0;         // which task, single_task mode only
  std::string seeds = "1,2,3,4,5";
  std::string out = "runs";
  int64_t stop_after_global_steps = 0;  // 0 = run to completion
  int64_t checkpoint_interval = 0;      // env steps between checkpoints, 0 = final only

  // budget.*
  int64_t steps_per_task = 40000;
  int steps_per_iteration = 200;
  double train_ratio = 0.5;  // world-model updates per collected step
  int64_t prefill_steps = 1000;
  int64_t eval_interval = 2000;
  int eval_episodes = 10;

  // replay.*
  int chunk_size = 64;
  int64_t fifo_steps = 4096;
  int64_t ltdm_chunks = 64;

  // wm.*
  int latent_units = 8;
  int latent_classes = 8;
  int deter_width = 128;
  int embed_width = 128;
  int wm_hidden_width = 128;
  int wm_hidden_layers = 2;
  double free_bits = 1.0;
  double beta_dyn = 0.5;
  double beta_rep = 0.1;

  // agent.*
  double gamma = 0.95;
  double lambda = 0.95;
  double entropy_coef = 3e-3;
  int horizon = 16;
  double slow_decay = 0.98;
  int ac_hidden_width = 128;
  int ac_hidden_layers = 2;

  // train.*
  int batch_size = 16;
  int batch_length = 32;
  double lr = 4e-4;
  double adam_eps = 1e-8;
  double grad_clip = 100.0;
  int dream_starts = 64;  // imagination start states per agent update

  // rewards.* : optional per-task scale overrides, "label:value,label:value"
  std::string reward_scales;

  bool operator==(const ExperimentConfig&) const = default;

  void validate() const;
  int64_t iterations_per_task() const;
  std::vector<uint64_t> seed_list() const;
  std::map<std::string, double> reward_scale_overrides() const;
  RssmConfig rssm_config(const SuiteSpec& spec) const;
  AgentConfig agent_config(const SuiteSpec& spec) const;
};

ExperimentConfig parse_config_text(const std::string& text);
ExperimentConfig load_config_file(const std::string& path);
void apply_override(ExperimentConfig& c, const std::string& key, const std::string& value);

// Canonical text of a single field; throws ConfigError on an unknown key.
std::string config_field_text(const ExperimentConfig& c, const std::string& key);

// Canonical serialization: every key in a fixed order, one per line. The
// config hash is FNV-1a over exactly this text.
std::string config_to_text(const ExperimentConfig& c);
uint64_t config_hash(const ExperimentConfig& c);

// Identity shared across the arms of one experiment: like config_hash but
// also ignoring run.mode and run.task_index, so a continual run and its
// single-task and random-policy baselines hash alike.
uint64_t experiment_hash(const ExperimentConfig& c);

}  // namespace wmar
