#include "wmar/trainer.hpp"

#include <algorithm>
#include <charconv>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <map>
#include <memory>
#include <numeric>

#include "json.hpp"
#include "wmar/agent.hpp"
#include "wmar/binio.hpp"
#include "wmar/errors.hpp"
#include "wmar/fsutil.hpp"
#include "wmar/replay.hpp"
#include "wmar/rssm.hpp"
#include "wmar/version.hpp"

namespace wmar {

namespace {

using Real = float;
using WM = WorldModel<Real>;

// Independent generator streams. Parameter init uses its own streams inside
// the model and agent constructors; everything here must stay disjoint from
// those so that no phase can perturb another through shared randomness.
constexpr uint64_t kStreamCollect = 0xC011EC7ull;
constexpr uint64_t kStreamWmTrain = 0x73A14ull;
constexpr uint64_t kStreamDream = 0xD3EA6ull;
constexpr uint64_t kStreamKeys = 0x4E75ull;
constexpr uint64_t kStreamEnvBase = 0xE4100ull;  // + task index
constexpr uint64_t kStreamEvalBase = 0xEA00000000000000ull;

constexpr char kCkptMagic[9] = "WMARRUN1";

uint64_t eval_stream_id(int64_t global_step, int task, int episode) {
  return kStreamEvalBase | (static_cast<uint64_t>(global_step) << 20) |
         (static_cast<uint64_t>(task) << 12) | static_cast<uint64_t>(episode);
}

void save_rng(BinWriter& w, const Rng& rng) {
  for (const uint64_t word : rng.state()) w.u64(word);
}

Rng load_rng(BinReader& r) {
  std::array<uint64_t, 4> s;
  for (uint64_t& word : s) word = r.u64();
  Rng rng(0);
  rng.set_state(s);
  return rng;
}

Mat<Real> obs_row(const std::vector<float>& obs) {
  Mat<Real> m(1, static_cast<int>(obs.size()));
  for (size_t i = 0; i < obs.size(); ++i) m(0, static_cast<int>(i)) = obs[i];
  return m;
}

Mat<Real> mat_row(const Mat<Real>& m, int r) {
  Mat<Real> out(1, m.cols());
  for (int c = 0; c < m.cols(); ++c) out(0, c) = m(r, c);
  return out;
}

uint64_t suite_hash(const SuiteSpec& spec) {
  std::string blob = spec.name;
  blob += "|" + std::to_string(spec.observation_width);
  blob += "|" + std::to_string(spec.action_count);
  for (int k = 0; k < spec.task_count(); ++k) {
    char buf[64];
    std::snprintf(buf, sizeof buf, "%.17g", spec.reward_scales[static_cast<size_t>(k)]);
    blob += "|" + spec.task_labels[static_cast<size_t>(k)] + ":" + buf;
  }
  return fnv1a64(blob);
}

class Trainer {
 public:
  Trainer(const ExperimentConfig& cfg, uint64_t seed, std::string dir)
      : cfg_(cfg),
        spec_(suite_spec(cfg.suite)),
        seed_(seed),
        dir_(std::move(dir)),
        collect_rng_(0),
        wm_rng_(0),
        dream_rng_(0) {
    cfg_.validate();
    scales_ = RewardScaleTable::for_suite(spec_);
    for (const auto& [label, v] : cfg_.reward_scale_overrides()) scales_.scales[label] = v;
    if (cfg_.mode == "single_task") {
      tasks_ = {cfg_.task_index};
      eval_tasks_ = {cfg_.task_index};
    } else {
      if (cfg_.mode != "random")
        for (int t = 0; t < spec_.task_count(); ++t) tasks_.push_back(t);
      for (int t = 0; t < spec_.task_count(); ++t) eval_tasks_.push_back(t);
    }
  }

  RunRecord run(bool resume) {
    const auto t0 = std::chrono::steady_clock::now();
    make_dirs(dir_);
    atomic_write_file(path_join(dir_, "config.cfg"), config_to_text(cfg_));

    const std::string ckpt = path_join(dir_, "checkpoint.bin");
    if (resume && file_exists(ckpt)) {
      init_fresh();
      load_checkpoint(ckpt);
    } else {
      init_fresh();
    }

    // The pre-training evaluation exists in every run, including zero-budget
    // ones; a resumed run already carries it in its restored rows.
    if (rows_.empty() && global_step_ == 0) eval_point();

    bool stopped = false;
    while (cur_task_ < static_cast<int>(tasks_.size())) {
      if (cfg_.steps_per_task == 0) {
        advance_task();
        continue;
      }
      if (cfg_.stop_after_global_steps > 0 && global_step_ >= cfg_.stop_after_global_steps) {
        stopped = true;
        break;
      }
      collect_iteration();
      update_phase();
      if (global_step_ % cfg_.eval_interval == 0) eval_point();
      if (cfg_.checkpoint_interval > 0 && global_step_ % cfg_.checkpoint_interval == 0)
        save_checkpoint(ckpt);
      if (task_step_ >= cfg_.steps_per_task) advance_task();
    }

    save_checkpoint(ckpt);
    atomic_write_file(path_join(dir_, "metrics.csv"), metrics_csv_text(rows_));

    RunRecord rec;
    rec.curves = curves_from_rows(rows_, spec_.task_count());
    rec.rows = rows_;
    rec.seed = seed_;
    rec.config_hash = hex64(config_hash(cfg_));
    rec.global_steps = global_step_;
    rec.peak_stored_steps = buffer_->peak_stored_steps();
    rec.memory_bound_steps = buffer_->memory_bound_steps();
    rec.completed = !stopped;
    rec.wall_seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    rec.run_dir = dir_;
    write_manifest(rec);
    return rec;
  }

 private:
  void init_fresh() {
    wm_ = std::make_unique<WM>(cfg_.rssm_config(spec_), seed_);
    agent_ = std::make_unique<ActorCritic<Real>>(cfg_.agent_config(spec_), seed_);
    int64_t fifo_cap = cfg_.fifo_steps;
    int64_t ltdm_chunks = cfg_.ltdm_chunks;
    if (cfg_.mode == "fifo_only") {
      // Equal memory: the long-term allotment is folded into the FIFO.
      fifo_cap += cfg_.ltdm_chunks * cfg_.chunk_size;
      ltdm_chunks = 0;
    }
    buffer_ = std::make_unique<AugmentedBuffer>(cfg_.chunk_size, fifo_cap, ltdm_chunks,
                                                Rng::stream(seed_, kStreamKeys).next_u64());
    wm_opt_ = Adam<Real>(Real(0.9), Real(0.999), static_cast<Real>(cfg_.adam_eps));
    collect_rng_ = Rng::stream(seed_, kStreamCollect);
    wm_rng_ = Rng::stream(seed_, kStreamWmTrain);
    dream_rng_ = Rng::stream(seed_, kStreamDream);
    global_step_ = 0;
    task_step_ = 0;
    cur_task_ = 0;
    last_trained_ = -1;
    need_reset_ = true;
    filter_ = {Mat<Real>::zeros(1, cfg_.deter_width),
               Mat<Real>::zeros(1, cfg_.latent_units * cfg_.latent_classes)};
    rows_.clear();
    env_.reset();
    if (!tasks_.empty()) env_ = make_env(tasks_[0]);
  }

  std::unique_ptr<Env> make_env(int task) const {
    return make_task_env(cfg_.suite, task, Rng::stream(seed_, kStreamEnvBase + static_cast<uint64_t>(task)).next_u64());
  }

  void advance_task() {
    if (task_step_ != cfg_.steps_per_task && cfg_.steps_per_task != 0)
      throw RuntimeError("trainer: task ended with a partial step budget");
    ++cur_task_;
    task_step_ = 0;
    if (cur_task_ < static_cast<int>(tasks_.size())) {
      env_ = make_env(tasks_[cur_task_]);
      need_reset_ = true;
    } else {
      env_.reset();
    }
  }

  void collect_iteration() {
    const int task = tasks_[static_cast<size_t>(cur_task_)];
    last_trained_ = task;
    const std::string& label = spec_.task_labels[static_cast<size_t>(task)];
    for (int i = 0; i < cfg_.steps_per_iteration; ++i) {
      if (need_reset_) {
        const std::vector<float> obs = env_->reset();
        filter_ = wm_->observe_step(filter_, 0, obs_row(obs), true, collect_rng_).state;
        buffer_->insert_step(Step{obs, 0, 0.0f, true}, task);
        need_reset_ = false;
      }
      const int action =
          global_step_ < cfg_.prefill_steps
              ? collect_rng_.uniform_int(spec_.action_count)
              : agent_->act(ActorCritic<Real>::concat_state(filter_.h, filter_.z), collect_rng_,
                            false);
      const EnvStep es = env_->step(action);
      const double scaled = scale_reward(static_cast<double>(es.reward), label, scales_);
      buffer_->insert_step(Step{es.observation, action, static_cast<float>(scaled), false}, task);
      if (es.done) {
        // The terminal observation is stored and trained on; the filter state
        // it would produce is never consumed, so the update is skipped.
        need_reset_ = true;
      } else {
        filter_ = wm_->observe_step(filter_, action, obs_row(es.observation), false, collect_rng_)
                      .state;
      }
      ++global_step_;
      ++task_step_;
    }
  }

  void update_phase() {
    if (global_step_ < cfg_.prefill_steps) return;
    const int updates =
        static_cast<int>(std::llround(cfg_.train_ratio * cfg_.steps_per_iteration));
    for (int u = 0; u < updates; ++u) {
      if (!buffer_->can_sample(cfg_.batch_length)) return;
      try {
        const Minibatch mb =
            buffer_->sample_minibatch(cfg_.batch_size, cfg_.batch_length, wm_rng_);
        const auto sb = make_sequence_batch<Real>(mb, spec_.observation_width, spec_.action_count);
        Tape<Real> tape;
        wm_->params().zero_grads();
        const auto res = wm_->observe_sequence(tape, sb, wm_rng_);
        if (!std::isfinite(res.diag.total))
          throw NumericsError("trainer: world model loss is non-finite");
        tape.backward(res.loss);
        wm_opt_.step(wm_->params(), static_cast<Real>(cfg_.lr), static_cast<Real>(cfg_.grad_clip));
        const auto starts = pick_starts(res.states);
        const auto traj = agent_->dream_rollout(*wm_, starts, cfg_.horizon, dream_rng_);
        const AgentDiag diag = agent_->update(traj, static_cast<Real>(cfg_.lr),
                                              static_cast<Real>(cfg_.grad_clip));
        if (!std::isfinite(diag.actor_loss) || !std::isfinite(diag.critic_loss))
          throw NumericsError("trainer: agent loss is non-finite");
      } catch (const NumericsError&) {
        save_checkpoint(path_join(dir_, "crash.bin"));
        throw;
      }
    }
  }

  // Imagination starts: a without-replacement subsample of the minibatch's
  // posterior states, so dreams branch from the same distribution the world
  // model was just trained on.
  std::vector<WM::StateValue> pick_starts(const std::vector<WM::StateValue>& states) {
    const int L = static_cast<int>(states.size());
    const int B = states[0].h.rows();
    const int total = L * B;
    const int want = std::min(cfg_.dream_starts, total);
    std::vector<int> idx(static_cast<size_t>(total));
    std::iota(idx.begin(), idx.end(), 0);
    std::vector<WM::StateValue> out;
    out.reserve(static_cast<size_t>(want));
    for (int i = 0; i < want; ++i) {
      std::swap(idx[static_cast<size_t>(i)],
                idx[static_cast<size_t>(i + dream_rng_.uniform_int(total - i))]);
      const int l = idx[static_cast<size_t>(i)] / B;
      const int b = idx[static_cast<size_t>(i)] % B;
      out.push_back({mat_row(states[static_cast<size_t>(l)].h, b),
                     mat_row(states[static_cast<size_t>(l)].z, b)});
    }
    return out;
  }

  void eval_point() {
    const int trained = global_step_ == 0 ? -1 : last_trained_;
    for (const int task : eval_tasks_) {
      for (int ep = 0; ep < cfg_.eval_episodes; ++ep)
        rows_.push_back({global_step_, trained, task, eval_episode(task, ep)});
    }
  }

  // Fresh environment and a generator stream keyed by (seed, step, task,
  // episode): evaluation never consumes training randomness, so inserting or
  // removing eval points cannot change the trained policy.
  double eval_episode(int task, int episode) {
    Rng rng = Rng::stream(seed_, eval_stream_id(global_step_, task, episode));
    const std::unique_ptr<Env> env = make_task_env(cfg_.suite, task, rng.next_u64());
    const bool random_policy = cfg_.mode == "random";
    std::vector<float> obs = env->reset();
    WM::StateValue st{Mat<Real>::zeros(1, cfg_.deter_width),
                      Mat<Real>::zeros(1, cfg_.latent_units * cfg_.latent_classes)};
    if (!random_policy) st = wm_->observe_step(st, 0, obs_row(obs), true, rng).state;
    double ret = 0.0;
    bool done = false;
    while (!done) {
      const int action =
          random_policy
              ? rng.uniform_int(spec_.action_count)
              : agent_->act(ActorCritic<Real>::concat_state(st.h, st.z), rng, true);
      const EnvStep es = env->step(action);
      ret += static_cast<double>(es.reward);  // raw task units
      done = es.done;
      if (!done && !random_policy)
        st = wm_->observe_step(st, action, obs_row(es.observation), false, rng).state;
    }
    return ret;
  }

  void save_checkpoint(const std::string& path) const {
    BinWriter w;
    w.magic(kCkptMagic);
    w.u64(config_hash(cfg_));
    w.u64(seed_);
    w.i64(global_step_);
    w.i64(task_step_);
    w.i32(cur_task_);
    w.i32(last_trained_);
    w.u8(need_reset_ ? 1 : 0);
    save_rng(w, collect_rng_);
    save_rng(w, wm_rng_);
    save_rng(w, dream_rng_);
    w.mat(filter_.h);
    w.mat(filter_.z);
    wm_->save(w);
    wm_opt_.save(w);
    agent_->save(w);
    buffer_->save(w);
    w.u8(env_ ? 1 : 0);
    if (env_) env_->save(w);
    w.u64(rows_.size());
    for (const EvalRow& r : rows_) {
      w.i64(r.global_step);
      w.i32(r.task_trained);
      w.i32(r.eval_task);
      w.f64(r.episodic_reward);
    }
    atomic_write_file(path, w.bytes());
  }

  void load_checkpoint(const std::string& path) {
    const std::vector<uint8_t> bytes = read_binary_file(path);
    BinReader r(bytes);
    r.expect_magic(kCkptMagic);
    if (r.u64() != config_hash(cfg_))
      throw RuntimeError("checkpoint: configuration does not match " + path);
    if (r.u64() != seed_) throw RuntimeError("checkpoint: seed does not match " + path);
    global_step_ = r.i64();
    task_step_ = r.i64();
    cur_task_ = r.i32();
    last_trained_ = r.i32();
    need_reset_ = r.u8() != 0;
    collect_rng_ = load_rng(r);
    wm_rng_ = load_rng(r);
    dream_rng_ = load_rng(r);
    filter_.h = r.mat<Real>();
    filter_.z = r.mat<Real>();
    wm_->load(r);
    wm_opt_.load(r);
    agent_->load(r);
    buffer_->load(r);
    const bool has_env = r.u8() != 0;
    env_.reset();
    if (has_env) {
      if (cur_task_ >= static_cast<int>(tasks_.size()))
        throw RuntimeError("checkpoint: live environment past the last task");
      env_ = make_env(tasks_[static_cast<size_t>(cur_task_)]);
      env_->load(r);
    }
    rows_.clear();
    const uint64_t n = r.u64();
    for (uint64_t i = 0; i < n; ++i) {
      EvalRow row;
      row.global_step = r.i64();
      row.task_trained = r.i32();
      row.eval_task = r.i32();
      row.episodic_reward = r.f64();
      rows_.push_back(row);
    }
  }

  void write_manifest(const RunRecord& rec) const {
    nlohmann::json j;
    j["code_version"] = kVersion;
    j["suite"] = cfg_.suite;
    j["suite_hash"] = hex64(suite_hash(spec_));
    j["config_hash"] = rec.config_hash;
    j["experiment_hash"] = hex64(experiment_hash(cfg_));
    j["mode"] = cfg_.mode;
    j["seed"] = rec.seed;
    j["global_steps"] = rec.global_steps;
    j["completed"] = rec.completed;
    j["wall_seconds"] = rec.wall_seconds;
    j["peak_stored_steps"] = rec.peak_stored_steps;
    j["memory_bound_steps"] = rec.memory_bound_steps;
    j["steps_per_task"] = cfg_.steps_per_task;
    j["eval_interval"] = cfg_.eval_interval;
    j["eval_episodes"] = cfg_.eval_episodes;
    j["task_count"] = spec_.task_count();
    j["task_index"] = cfg_.task_index;
    j["artifacts"] = {{"metrics", "metrics.csv"},
                      {"checkpoint", "checkpoint.bin"},
                      {"config", "config.cfg"}};
    atomic_write_file(path_join(dir_, "manifest.json"), j.dump(2) + "\n");
  }

  ExperimentConfig cfg_;
  SuiteSpec spec_;
  uint64_t seed_;
  std::string dir_;
  RewardScaleTable scales_;
  std::vector<int> tasks_;
  std::vector<int> eval_tasks_;

  std::unique_ptr<WM> wm_;
  std::unique_ptr<ActorCritic<Real>> agent_;
  std::unique_ptr<AugmentedBuffer> buffer_;
  Adam<Real> wm_opt_;
  Rng collect_rng_, wm_rng_, dream_rng_;
  std::unique_ptr<Env> env_;
  WM::StateValue filter_;
  bool need_reset_ = true;
  int cur_task_ = 0;
  int last_trained_ = -1;
  int64_t global_step_ = 0;
  int64_t task_step_ = 0;
  std::vector<EvalRow> rows_;
};

}  // namespace

RunRecord run_experiment(const ExperimentConfig& cfg, uint64_t seed, const std::string& out_dir,
                         bool resume) {
  Trainer trainer(cfg, seed, out_dir);
  return trainer.run(resume);
}

std::string metrics_csv_text(const std::vector<EvalRow>& rows) {
  std::string out = "global_step,task_trained,eval_task,episodic_reward\n";
  char buf[128];
  for (const EvalRow& r : rows) {
    std::snprintf(buf, sizeof buf, "%lld,%d,%d,%.17g\n", static_cast<long long>(r.global_step),
                  r.task_trained, r.eval_task, r.episodic_reward);
    out += buf;
  }
  return out;
}

std::vector<EvalRow> parse_metrics_csv(const std::string& text) {
  std::vector<EvalRow> rows;
  size_t pos = 0;
  bool first = true;
  while (pos < text.size()) {
    size_t end = text.find('\n', pos);
    if (end == std::string::npos) end = text.size();
    const std::string line = text.substr(pos, end - pos);
    pos = end + 1;
    if (line.empty()) continue;
    if (first) {
      if (line != "global_step,task_trained,eval_task,episodic_reward")
        throw RuntimeError("metrics csv: unexpected header '" + line + "'");
      first = false;
      continue;
    }
    EvalRow r;
    const char* p = line.data();
    const char* lend = p + line.size();
    auto field = [&](auto& value) {
      const auto [ptr, ec] = std::from_chars(p, lend, value);
      if (ec != std::errc()) throw RuntimeError("metrics csv: bad row '" + line + "'");
      p = ptr;
      if (p < lend && *p == ',') ++p;
    };
    field(r.global_step);
    field(r.task_trained);
    field(r.eval_task);
    field(r.episodic_reward);
    if (p != lend) throw RuntimeError("metrics csv: trailing bytes in row '" + line + "'");
    rows.push_back(r);
  }
  if (first) throw RuntimeError("metrics csv: missing header");
  return rows;
}

std::vector<PerfCurve> curves_from_rows(const std::vector<EvalRow>& rows, int task_count) {
  if (task_count < 1) throw RuntimeError("curves: task count must be positive");
  // Group episodes by (step, task); row order already has steps ascending.
  std::map<int64_t, std::map<int, std::vector<double>>> grouped;
  for (const EvalRow& r : rows) {
    if (r.eval_task < 0 || r.eval_task >= task_count)
      throw RuntimeError("curves: eval task out of range");
    grouped[r.global_step][r.eval_task].push_back(r.episodic_reward);
  }
  std::vector<PerfCurve> curves(static_cast<size_t>(task_count));
  for (const auto& [step, by_task] : grouped)
    for (const auto& [task, episodes] : by_task)
      curves[static_cast<size_t>(task)].push(step, quartiles(episodes).median);
  return curves;
}

}  // namespace wmar
