#include "wmar/config.hpp"

#include <charconv>
#include <cmath>
#include <cstdio>
#include <set>

#include "wmar/errors.hpp"
#include "wmar/fsutil.hpp"

namespace wmar {

namespace {

// Single source of truth for the key set: parsing, overrides, serialization,
// and hashing all walk this list. The visitor sees (key, field reference).
template <typename C, typename V>
void visit_fields(C& c, V&& v) {
  v("run.suite", c.suite);
  v("run.mode", c.mode);
  v("run.task_index", c.task_index);
  v("run.seeds", c.seeds);
  v("run.out", c.out);
  v("run.stop_after_global_steps", c.stop_after_global_steps);
  v("run.checkpoint_interval", c.checkpoint_interval);
  v("budget.steps_per_task", c.steps_per_task);
  v("budget.steps_per_iteration", c.steps_per_iteration);
  v("budget.train_ratio", c.train_ratio);
  v("budget.prefill_steps", c.prefill_steps);
  v("budget.eval_interval", c.eval_interval);
  v("budget.eval_episodes", c.eval_episodes);
  v("replay.chunk_size", c.chunk_size);
  v("replay.fifo_steps", c.fifo_steps);
  v("replay.ltdm_chunks", c.ltdm_chunks);
  v("wm.latent_units", c.latent_units);
  v("wm.latent_classes", c.latent_classes);
  v("wm.deter_width", c.deter_width);
  v("wm.embed_width", c.embed_width);
  v("wm.hidden_width", c.wm_hidden_width);
  v("wm.hidden_layers", c.wm_hidden_layers);
  v("wm.free_bits", c.free_bits);
  v("wm.beta_dyn", c.beta_dyn);
  v("wm.beta_rep", c.beta_rep);
  v("agent.gamma", c.gamma);
  v("agent.lambda", c.lambda);
  v("agent.entropy_coef", c.entropy_coef);
  v("agent.horizon", c.horizon);
  v("agent.slow_decay", c.slow_decay);
  v("agent.hidden_width", c.ac_hidden_width);
  v("agent.hidden_layers", c.ac_hidden_layers);
  v("train.batch_size", c.batch_size);
  v("train.batch_length", c.batch_length);
  v("train.lr", c.lr);
  v("train.adam_eps", c.adam_eps);
  v("train.grad_clip", c.grad_clip);
  v("train.dream_starts", c.dream_starts);
  v("rewards.scales", c.reward_scales);
}

std::string trim(const std::string& s) {
  size_t a = s.find_first_not_of(" \t\r\n");
  if (a == std::string::npos) return "";
  size_t b = s.find_last_not_of(" \t\r\n");
  return s.substr(a, b - a + 1);
}

template <typename I>
I parse_integer(const std::string& key, const std::string& value) {
  I out{};
  const char* begin = value.data();
  const char* end = begin + value.size();
  const auto [ptr, ec] = std::from_chars(begin, end, out);
  if (ec != std::errc() || ptr != end)
    throw ConfigError("config: key " + key + " needs an integer, got '" + value + "'");
  return out;
}

double parse_double(const std::string& key, const std::string& value) {
  double out = 0.0;
  const char* begin = value.data();
  const char* end = begin + value.size();
  const auto [ptr, ec] = std::from_chars(begin, end, out);
  if (ec != std::errc() || ptr != end || !std::isfinite(out))
    throw ConfigError("config: key " + key + " needs a finite number, got '" + value + "'");
  return out;
}

void assign_field(const std::string& key, const std::string& value, std::string& field) {
  field = value;
}
void assign_field(const std::string& key, const std::string& value, int& field) {
  field = parse_integer<int>(key, value);
}
void assign_field(const std::string& key, const std::string& value, int64_t& field) {
  field = parse_integer<int64_t>(key, value);
}
void assign_field(const std::string& key, const std::string& value, double& field) {
  field = parse_double(key, value);
}

std::string field_text(const std::string& field) { return field; }
std::string field_text(int field) { return std::to_string(field); }
std::string field_text(int64_t field) { return std::to_string(field); }
std::string field_text(double field) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.17g", field);
  return buf;
}

void set_key(ExperimentConfig& c, const std::string& key, const std::string& value) {
  bool matched = false;
  visit_fields(c, [&](const char* name, auto& field) {
    if (!matched && key == name) {
      assign_field(key, value, field);
      matched = true;
    }
  });
  if (!matched) throw ConfigError("config: unknown key " + key);
}

std::vector<std::string> split(const std::string& s, char sep) {
  std::vector<std::string> parts;
  size_t start = 0;
  while (true) {
    const size_t pos = s.find(sep, start);
    if (pos == std::string::npos) {
      parts.push_back(s.substr(start));
      return parts;
    }
    parts.push_back(s.substr(start, pos - start));
    start = pos + 1;
  }
}

}  // namespace

void ExperimentConfig::validate() const {
  const SuiteSpec spec = suite_spec(suite);
  if (mode != "wmar" && mode != "fifo_only" && mode != "single_task" && mode != "random")
    throw ConfigError("config: run.mode must be wmar, fifo_only, single_task, or random");
  if (mode == "single_task" && (task_index < 0 || task_index >= spec.task_count()))
    throw ConfigError("config: run.task_index out of range for suite " + suite);
  if (out.empty()) throw ConfigError("config: run.out must not be empty");

  if (steps_per_task < 0) throw ConfigError("config: budget.steps_per_task must be non-negative");
  if (steps_per_iteration < 1)
    throw ConfigError("config: budget.steps_per_iteration must be positive");
  if (steps_per_task % steps_per_iteration != 0)
    throw ConfigError("config: budget.steps_per_task must be a whole number of iterations");
  if (train_ratio < 0) throw ConfigError("config: budget.train_ratio must be non-negative");
  if (prefill_steps < 0 || prefill_steps % steps_per_iteration != 0)
    throw ConfigError("config: budget.prefill_steps must be a non-negative iteration multiple");
  if (steps_per_task > 0 && prefill_steps >= steps_per_task)
    throw ConfigError("config: budget.prefill_steps must leave room to train");
  if (steps_per_task == 0 && prefill_steps != 0)
    throw ConfigError("config: budget.prefill_steps must be zero for a zero-step run");
  if (eval_interval < 1 || eval_interval % steps_per_iteration != 0)
    throw ConfigError("config: budget.eval_interval must be a positive iteration multiple");
  if (eval_episodes < 1) throw ConfigError("config: budget.eval_episodes must be positive");

  if (chunk_size < 2) throw ConfigError("config: replay.chunk_size must be at least 2");
  if (batch_length < 2 || batch_length > chunk_size)
    throw ConfigError("config: train.batch_length must lie in [2, replay.chunk_size]");
  if (batch_size < 1) throw ConfigError("config: train.batch_size must be positive");
  if (fifo_steps < chunk_size)
    throw ConfigError("config: replay.fifo_steps must hold at least one chunk");
  if (ltdm_chunks < 0) throw ConfigError("config: replay.ltdm_chunks must be non-negative");
  if ((mode == "wmar" || mode == "single_task") && ltdm_chunks < 1)
    throw ConfigError("config: replay.ltdm_chunks must be positive outside fifo_only mode");

  if (!(lr > 0)) throw ConfigError("config: train.lr must be positive");
  if (!(adam_eps > 0)) throw ConfigError("config: train.adam_eps must be positive");
  if (!(grad_clip > 0)) throw ConfigError("config: train.grad_clip must be positive");
  if (dream_starts < 1) throw ConfigError("config: train.dream_starts must be positive");

  if (stop_after_global_steps < 0 ||
      (stop_after_global_steps > 0 && stop_after_global_steps % steps_per_iteration != 0))
    throw ConfigError("config: run.stop_after_global_steps must be an iteration multiple");
  if (checkpoint_interval < 0 ||
      (checkpoint_interval > 0 && checkpoint_interval % steps_per_iteration != 0))
    throw ConfigError("config: run.checkpoint_interval must be an iteration multiple");

  rssm_config(spec).validate();
  agent_config(spec).validate();
  seed_list();
  reward_scale_overrides();
}

int64_t ExperimentConfig::iterations_per_task() const {
  return steps_per_task / steps_per_iteration;
}

std::vector<uint64_t> ExperimentConfig::seed_list() const {
  std::vector<uint64_t> out;
  std::set<uint64_t> seen;
  for (const std::string& part : split(seeds, ',')) {
    const std::string token = trim(part);
    if (token.empty()) throw ConfigError("config: run.seeds has an empty entry");
    const uint64_t s = parse_integer<uint64_t>("run.seeds", token);
    if (!seen.insert(s).second)
      throw ConfigError("config: run.seeds repeats seed " + token);
    out.push_back(s);
  }
  if (out.empty()) throw ConfigError("config: run.seeds must list at least one seed");
  return out;
}

std::map<std::string, double> ExperimentConfig::reward_scale_overrides() const {
  std::map<std::string, double> out;
  if (trim(reward_scales).empty()) return out;
  const SuiteSpec spec = suite_spec(suite);
  for (const std::string& part : split(reward_scales, ',')) {
    const std::string entry = trim(part);
    const size_t colon = entry.find(':');
    if (colon == std::string::npos)
      throw ConfigError("config: rewards.scales entries need label:value, got '" + entry + "'");
    const std::string label = trim(entry.substr(0, colon));
    const double value = parse_double("rewards.scales", trim(entry.substr(colon + 1)));
    bool known = false;
    for (const std::string& l : spec.task_labels) known = known || l == label;
    if (!known)
      throw ConfigError("config: rewards.scales names '" + label + "', not in suite " + suite);
    if (!(value > 0)) throw ConfigError("config: rewards.scales values must be positive");
    if (!out.emplace(label, value).second)
      throw ConfigError("config: rewards.scales repeats label '" + label + "'");
  }
  return out;
}

RssmConfig ExperimentConfig::rssm_config(const SuiteSpec& spec) const {
  RssmConfig r;
  r.obs_width = spec.observation_width;
  r.action_count = spec.action_count;
  r.latent_units = latent_units;
  r.latent_classes = latent_classes;
  r.deter_width = deter_width;
  r.embed_width = embed_width;
  r.hidden_width = wm_hidden_width;
  r.hidden_layers = wm_hidden_layers;
  r.free_bits = free_bits;
  r.beta_dyn = beta_dyn;
  r.beta_rep = beta_rep;
  return r;
}

AgentConfig ExperimentConfig::agent_config(const SuiteSpec& spec) const {
  AgentConfig a;
  a.state_width = rssm_config(spec).state_width();
  a.action_count = spec.action_count;
  a.hidden_width = ac_hidden_width;
  a.hidden_layers = ac_hidden_layers;
  a.gamma = gamma;
  a.lambda = lambda;
  a.entropy_coef = entropy_coef;
  a.horizon = horizon;
  a.slow_decay = slow_decay;
  return a;
}

ExperimentConfig parse_config_text(const std::string& text) {
  ExperimentConfig c;
  std::set<std::string> assigned;
  size_t line_no = 0;
  for (const std::string& raw_line : split(text, '\n')) {
    ++line_no;
    std::string line = raw_line;
    const size_t hash = line.find('#');
    if (hash != std::string::npos) line = line.substr(0, hash);
    line = trim(line);
    if (line.empty()) continue;
    const size_t eq = line.find('=');
    if (eq == std::string::npos)
      throw ConfigError("config: line " + std::to_string(line_no) + " is not key = value");
    const std::string key = trim(line.substr(0, eq));
    const std::string value = trim(line.substr(eq + 1));
    if (key.empty()) throw ConfigError("config: line " + std::to_string(line_no) + " has no key");
    if (!assigned.insert(key).second)
      throw ConfigError("config: duplicate key " + key);
    set_key(c, key, value);
  }
  return c;
}

ExperimentConfig load_config_file(const std::string& path) {
  return parse_config_text(read_text_file(path));
}

void apply_override(ExperimentConfig& c, const std::string& key, const std::string& value) {
  set_key(c, trim(key), trim(value));
}

std::string config_field_text(const ExperimentConfig& c, const std::string& key) {
  const std::string wanted = trim(key);
  std::string out;
  bool found = false;
  visit_fields(c, [&](const char* name, const auto& field) {
    if (found || wanted != name) return;
    found = true;
    out = field_text(field);
  });
  if (!found) throw ConfigError("unknown config key: " + wanted);
  return out;
}

std::string config_to_text(const ExperimentConfig& c) {
  std::string out;
  visit_fields(c, [&](const char* name, const auto& field) {
    out += name;
    out += " = ";
    out += field_text(field);
    out += "\n";
  });
  return out;
}

namespace {

uint64_t hash_excluding(const ExperimentConfig& c, const std::set<std::string>& skip) {
  std::string out;
  visit_fields(c, [&](const char* name, const auto& field) {
    if (skip.count(name)) return;
    out += name;
    out += " = ";
    out += field_text(field);
    out += "\n";
  });
  return fnv1a64(out);
}

// Control-plane keys steer when and where a run executes, never what it
// computes, so they stay out of the run identity. A run stopped early and
// resumed therefore hashes like its uninterrupted twin.
const std::set<std::string> kControlKeys = {
    "run.out", "run.seeds", "run.stop_after_global_steps", "run.checkpoint_interval"};

}  // namespace

uint64_t config_hash(const ExperimentConfig& c) { return hash_excluding(c, kControlKeys); }

uint64_t experiment_hash(const ExperimentConfig& c) {
  // The arm selectors distinguish the continual run from its single-task and
  // random-policy baselines; everything else must agree for those arms to be
  // comparable, which is exactly what this hash certifies.
  std::set<std::string> skip = kControlKeys;
  skip.insert("run.mode");
  skip.insert("run.task_index");
  return hash_excluding(c, skip);
}

}  // namespace wmar
