#pragma once

#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include "wmar/binio.hpp"
#include "wmar/envs.hpp"
#include "wmar/errors.hpp"
#include "wmar/nn.hpp"
#include "wmar/rng.hpp"
#include "wmar/rssm.hpp"
#include "wmar/tape.hpp"

namespace wmar {

// ---------------------------------------------------------------------------
// Configuration
// ---------------------------------------------------------------------------

struct AgentConfig {
  int state_width = 0;   // width of the model state rows fed to both heads
  int action_count = 0;
  int hidden_width = 128;
  int hidden_layers = 2;  // 0 makes both heads plain linear maps
  double gamma = 0.95;
  double lambda = 0.95;
  double entropy_coef = 3e-3;
  int horizon = 16;        // dream rollout length
  double slow_decay = 0.98;  // EMA factor for the target critic

  void validate() const {
    if (state_width < 1) throw ConfigError("agent: state_width must be positive");
    if (action_count < 2) throw ConfigError("agent: action_count must be at least 2");
    if (hidden_width < 1) throw ConfigError("agent: hidden_width must be positive");
    if (hidden_layers < 0) throw ConfigError("agent: hidden_layers must be non-negative");
    if (!(gamma > 0.0 && gamma < 1.0)) throw ConfigError("agent: gamma must lie in (0,1)");
    if (!(lambda >= 0.0 && lambda <= 1.0)) throw ConfigError("agent: lambda must lie in [0,1]");
    if (entropy_coef < 0.0) throw ConfigError("agent: entropy_coef must be non-negative");
    if (horizon < 1) throw ConfigError("agent: horizon must be at least 1");
    if (!(slow_decay >= 0.0 && slow_decay < 1.0))
      throw ConfigError("agent: slow_decay must lie in [0,1)");
  }

  void save(BinWriter& w) const {
    w.i32(state_width);
    w.i32(action_count);
    w.i32(hidden_width);
    w.i32(hidden_layers);
    w.f64(gamma);
    w.f64(lambda);
    w.f64(entropy_coef);
    w.i32(horizon);
    w.f64(slow_decay);
  }

  static AgentConfig loaded(BinReader& r) {
    AgentConfig c;
    c.state_width = r.i32();
    c.action_count = r.i32();
    c.hidden_width = r.i32();
    c.hidden_layers = r.i32();
    c.gamma = r.f64();
    c.lambda = r.f64();
    c.entropy_coef = r.f64();
    c.horizon = r.i32();
    c.slow_decay = r.f64();
    return c;
  }

  bool operator==(const AgentConfig& o) const {
    return state_width == o.state_width && action_count == o.action_count &&
           hidden_width == o.hidden_width && hidden_layers == o.hidden_layers &&
           gamma == o.gamma && lambda == o.lambda && entropy_coef == o.entropy_coef &&
           horizon == o.horizon && slow_decay == o.slow_decay;
  }
};

// ---------------------------------------------------------------------------
// Reward scaling
// ---------------------------------------------------------------------------

// Static per-task reward multipliers, applied once at collection time so the
// reward head and the returns both see comparably sized targets.
struct RewardScaleTable {
  std::map<std::string, double> scales;

  static RewardScaleTable known() {
    RewardScaleTable t;
    for (const auto& [label, s] : known_reward_scales()) t.scales[label] = s;
    return t;
  }

  static RewardScaleTable for_suite(const SuiteSpec& spec) {
    RewardScaleTable t;
    for (int k = 0; k < spec.task_count(); ++k)
      t.scales[spec.task_labels[static_cast<size_t>(k)]] =
          spec.reward_scales[static_cast<size_t>(k)];
    t.validate();
    return t;
  }

  double at(const std::string& label) const {
    const auto it = scales.find(label);
    if (it == scales.end()) throw RuntimeError("reward scale: unknown task label " + label);
    return it->second;
  }

  void validate() const {
    for (const auto& [label, s] : scales)
      if (!(s > 0.0)) throw ConfigError("reward scale for " + label + " must be positive");
  }
};

inline double scale_reward(double raw, const std::string& label, const RewardScaleTable& t) {
  return raw * t.at(label);
}

// ---------------------------------------------------------------------------
// Lambda returns
// ---------------------------------------------------------------------------

// Backward recursion over a batch of sequences:
//   returns[k] = rewards[k] + gamma*continues[k]*((1-lambda)*values[k]
//                                                 + lambda*returns[k+1])
// seeded with returns[H] = bootstrap. values[k] is the value of the state
// reached by step k, so the usual bootstrap is the final state's value.
template <typename T>
std::vector<Mat<T>> lambda_returns(const std::vector<Mat<T>>& rewards,
                                   const std::vector<Mat<T>>& values,
                                   const std::vector<Mat<T>>& continues, double gamma,
                                   double lambda, const Mat<T>& bootstrap) {
  const size_t H = rewards.size();
  if (values.size() != H || continues.size() != H)
    throw RuntimeError("lambda_returns: sequence length mismatch");
  if (H == 0) throw RuntimeError("lambda_returns: empty sequence");
  const int B = rewards[0].rows();
  if (bootstrap.rows() != B || bootstrap.cols() != 1)
    throw RuntimeError("lambda_returns: bootstrap shape mismatch");
  for (size_t k = 0; k < H; ++k)
    if (rewards[k].rows() != B || values[k].rows() != B || continues[k].rows() != B ||
        rewards[k].cols() != 1 || values[k].cols() != 1 || continues[k].cols() != 1)
      throw RuntimeError("lambda_returns: per-step shape mismatch");

  std::vector<Mat<T>> out(H, Mat<T>::zeros(B, 1));
  Mat<T> next = bootstrap;
  for (size_t kk = H; kk-- > 0;) {
    Mat<T>& row = out[kk];
    for (int b = 0; b < B; ++b) {
      const double mix = (1.0 - lambda) * static_cast<double>(values[kk](b, 0)) +
                         lambda * static_cast<double>(next(b, 0));
      row(b, 0) = static_cast<T>(static_cast<double>(rewards[kk](b, 0)) +
                                 gamma * static_cast<double>(continues[kk](b, 0)) * mix);
    }
    next = row;
  }
  return out;
}

// ---------------------------------------------------------------------------
// Dream trajectories
// ---------------------------------------------------------------------------

// Value-level record of an imagined rollout. REINFORCE treats the rollout as
// data, so nothing here carries gradients; the update rebuilds the policy
// graph on its own tape.
template <typename T>
struct DreamTrajectory {
  std::vector<Mat<T>> states;             // H+1 of [B, state_width]
  std::vector<std::vector<int>> actions;  // H of B sampled actions
  std::vector<Mat<T>> log_probs;          // H of [B, 1], diagnostics only
  std::vector<Mat<T>> rewards;            // H of [B, 1], predicted scaled rewards
  std::vector<Mat<T>> continues;          // H of [B, 1], continue probabilities

  int horizon() const { return static_cast<int>(actions.size()); }
  int batch() const { return states.empty() ? 0 : states[0].rows(); }
};

struct AgentDiag {
  double actor_loss = 0;
  double critic_loss = 0;
  double entropy = 0;       // mean policy entropy over the rollout, nats
  double mean_return = 0;   // mean lambda-return target
  double mean_value = 0;    // mean critic estimate on rollout states
  double actor_grad_norm = 0;
  double critic_grad_norm = 0;
};

// ---------------------------------------------------------------------------
// Actor-critic
// ---------------------------------------------------------------------------

// Policy and value heads over world-model states, trained purely inside
// dreamed trajectories: REINFORCE with a fixed entropy bonus for the actor,
// squared-error regression onto stop-gradient lambda returns for the critic.
// Targets and baselines come from a slow exponential copy of the critic.
template <typename T>
class ActorCritic {
 public:
  ActorCritic(const AgentConfig& cfg, uint64_t param_seed) : cfg_(cfg) {
    cfg_.validate();
    Rng rng = Rng::stream(param_seed, 0xac7e);
    actor_ = MlpP<T>::make(actor_ps_, "actor", cfg_.state_width, cfg_.hidden_width,
                           cfg_.hidden_layers, cfg_.action_count, rng);
    critic_ = MlpP<T>::make(critic_ps_, "critic", cfg_.state_width, cfg_.hidden_width,
                            cfg_.hidden_layers, 1, rng);
    slow_critic_ = MlpP<T>::make(slow_ps_, "slow_critic", cfg_.state_width, cfg_.hidden_width,
                                 cfg_.hidden_layers, 1, rng);
    // The slow critic starts as an exact copy of the critic.
    copy_params(critic_ps_, slow_ps_);
  }

  const AgentConfig& config() const { return cfg_; }
  ParamStore<T>& actor_params() { return actor_ps_; }
  ParamStore<T>& critic_params() { return critic_ps_; }

  // Action selection on a single model-state row: sampled for collection,
  // argmax for greedy evaluation.
  int act(const Mat<T>& state_row, Rng& rng, bool greedy) {
    const Mat<T> logits = head_values(actor_, state_row);
    if (greedy) {
      int best = 0;
      for (int a = 1; a < cfg_.action_count; ++a)
        if (logits(0, a) > logits(0, best)) best = a;
      return best;
    }
    return sample_row(logits, 0, rng);
  }

  Mat<T> policy_probs(const Mat<T>& state_rows) { return row_softmax(head_values(actor_, state_rows)); }

  double policy_entropy(const Mat<T>& state_row) {
    const Mat<T> p = policy_probs(state_row);
    double h = 0;
    for (int a = 0; a < p.cols(); ++a) {
      const double q = static_cast<double>(p(0, a));
      if (q > 0) h -= q * std::log(q);
    }
    return h;
  }

  Mat<T> values(const Mat<T>& state_rows) { return head_values(critic_, state_rows); }
  Mat<T> slow_values(const Mat<T>& state_rows) { return head_values(slow_critic_, state_rows); }

  // Rolls the world model forward H steps from the given posterior states,
  // sampling actions from the current policy. Entirely value-level.
  DreamTrajectory<T> dream_rollout(WorldModel<T>& wm,
                                   const std::vector<typename WorldModel<T>::StateValue>& starts,
                                   int horizon, Rng& rng) {
    if (starts.empty()) throw RuntimeError("dream_rollout: no start states");
    if (horizon < 1) throw RuntimeError("dream_rollout: horizon must be at least 1");
    const int B = static_cast<int>(starts.size());
    const int dw = starts[0].h.cols(), lw = starts[0].z.cols();
    if (dw + lw != cfg_.state_width)
      throw RuntimeError("dream_rollout: state width mismatch with agent config");

    Mat<T> h(B, dw), z(B, lw);
    for (int b = 0; b < B; ++b) {
      if (starts[static_cast<size_t>(b)].h.cols() != dw ||
          starts[static_cast<size_t>(b)].z.cols() != lw)
        throw RuntimeError("dream_rollout: ragged start states");
      for (int c = 0; c < dw; ++c) h(b, c) = starts[static_cast<size_t>(b)].h(0, c);
      for (int c = 0; c < lw; ++c) z(b, c) = starts[static_cast<size_t>(b)].z(0, c);
    }

    Tape<T> t;
    t.grad_enabled = false;
    FiniteCheckGuard fin(true);
    Var<T> hv = t.constant(h), zv = t.constant(z);

    DreamTrajectory<T> traj;
    traj.states.push_back(concat_state(h, z));
    for (int k = 0; k < horizon; ++k) {
      const Mat<T> logits = head_values(actor_, traj.states.back());
      std::vector<int> acts(static_cast<size_t>(B));
      Mat<T> lp(B, 1);
      Mat<T> onehot = Mat<T>::zeros(B, cfg_.action_count);
      const Mat<T> probs = row_softmax(logits);
      for (int b = 0; b < B; ++b) {
        const int a = sample_row(logits, b, rng);
        acts[static_cast<size_t>(b)] = a;
        onehot(b, a) = T(1);
        lp(b, 0) = static_cast<T>(std::log(std::max(static_cast<double>(probs(b, a)), 1e-30)));
      }
      const auto d = wm.dream_step(t, hv, zv, t.constant(onehot), rng);
      hv = d.h;
      zv = d.z;
      traj.actions.push_back(std::move(acts));
      traj.log_probs.push_back(std::move(lp));
      traj.rewards.push_back(t.val(d.reward.id));
      traj.continues.push_back(t.val(d.cont_prob.id));
      traj.states.push_back(concat_state(t.val(hv.id), t.val(zv.id)));
    }
    return traj;
  }

  // Builds both losses on the trajectory and leaves the gradients in the
  // parameter stores without stepping the optimizers. update() is this plus
  // the two optimizer steps and the slow-critic decay.
  AgentDiag accumulate_gradients(const DreamTrajectory<T>& traj) {
    check_trajectory(traj);
    FiniteCheckGuard fin(true);
    const int H = traj.horizon();
    const int B = traj.batch();
    const int rows = H * B;

    // Slow-critic values on every visited state: recursion values, the
    // bootstrap, and the advantage baseline all come from the same copy.
    std::vector<Mat<T>> slow_v(static_cast<size_t>(H) + 1);
    for (int k = 0; k <= H; ++k)
      slow_v[static_cast<size_t>(k)] = head_values(slow_critic_, traj.states[static_cast<size_t>(k)]);

    std::vector<Mat<T>> next_values(static_cast<size_t>(H));
    for (int k = 0; k < H; ++k) next_values[static_cast<size_t>(k)] = slow_v[static_cast<size_t>(k) + 1];
    const std::vector<Mat<T>> returns = lambda_returns(
        traj.rewards, next_values, traj.continues, cfg_.gamma, cfg_.lambda,
        slow_v[static_cast<size_t>(H)]);

    // Flatten the H x B rollout into one stacked matrix per pass.
    Mat<T> states_flat(rows, cfg_.state_width);
    Mat<T> returns_flat(rows, 1), adv_flat(rows, 1);
    std::vector<int> actions_flat(static_cast<size_t>(rows));
    double mean_return = 0;
    for (int k = 0; k < H; ++k)
      for (int b = 0; b < B; ++b) {
        const int r = k * B + b;
        for (int c = 0; c < cfg_.state_width; ++c)
          states_flat(r, c) = traj.states[static_cast<size_t>(k)](b, c);
        const double ret = static_cast<double>(returns[static_cast<size_t>(k)](b, 0));
        returns_flat(r, 0) = static_cast<T>(ret);
        adv_flat(r, 0) =
            static_cast<T>(ret - static_cast<double>(slow_v[static_cast<size_t>(k)](b, 0)));
        actions_flat[static_cast<size_t>(r)] = traj.actions[static_cast<size_t>(k)][static_cast<size_t>(b)];
        mean_return += ret;
      }
    mean_return /= rows;

    AgentDiag diag;
    diag.mean_return = mean_return;

    {
      Tape<T> t;
      Var<T> logits = actor_(t, t.constant(states_flat));
      Var<T> logp = categorical_log_prob(logits, actions_flat);
      Var<T> ent = entropy_rows(logits);
      Var<T> gain = add(mul(logp, t.constant(adv_flat)), scale(ent, T(cfg_.entropy_coef)));
      Var<T> loss = scale(mean_all(gain), T(-1));
      diag.actor_loss = static_cast<double>(t.val(loss.id)(0, 0));
      double esum = 0;
      for (int r = 0; r < rows; ++r) esum += static_cast<double>(t.val(ent.id)(r, 0));
      diag.entropy = esum / rows;
      actor_ps_.zero_grads();
      t.backward(loss);
    }
    {
      Tape<T> t;
      Var<T> v = critic_(t, t.constant(states_flat));
      Var<T> loss = mean_all(squared_diff_rowsum(v, returns_flat));
      diag.critic_loss = static_cast<double>(t.val(loss.id)(0, 0));
      double vsum = 0;
      for (int r = 0; r < rows; ++r) vsum += static_cast<double>(t.val(v.id)(r, 0));
      diag.mean_value = vsum / rows;
      critic_ps_.zero_grads();
      t.backward(loss);
    }
    return diag;
  }

  AgentDiag update(const DreamTrajectory<T>& traj, T lr, T grad_clip) {
    AgentDiag diag = accumulate_gradients(traj);
    diag.actor_grad_norm = static_cast<double>(actor_opt_.step(actor_ps_, lr, grad_clip));
    diag.critic_grad_norm = static_cast<double>(critic_opt_.step(critic_ps_, lr, grad_clip));
    decay_slow_critic();
    return diag;
  }

  void save(BinWriter& w) const {
    w.magic(kMagic);
    cfg_.save(w);
    actor_ps_.save(w);
    critic_ps_.save(w);
    slow_ps_.save(w);
    actor_opt_.save(w);
    critic_opt_.save(w);
  }

  void load(BinReader& r) {
    r.expect_magic(kMagic);
    if (!(AgentConfig::loaded(r) == cfg_))
      throw RuntimeError("agent checkpoint: config mismatch");
    actor_ps_.load(r);
    critic_ps_.load(r);
    slow_ps_.load(r);
    actor_opt_.load(r);
    critic_opt_.load(r);
  }

  static Mat<T> concat_state(const Mat<T>& h, const Mat<T>& z) {
    Mat<T> out(h.rows(), h.cols() + z.cols());
    for (int r = 0; r < h.rows(); ++r) {
      for (int c = 0; c < h.cols(); ++c) out(r, c) = h(r, c);
      for (int c = 0; c < z.cols(); ++c) out(r, h.cols() + c) = z(r, c);
    }
    return out;
  }

 private:
  static constexpr char kMagic[9] = "WMARAGT1";

  Mat<T> head_values(const MlpP<T>& head, const Mat<T>& rows) {
    if (rows.cols() != cfg_.state_width)
      throw RuntimeError("agent: state row width mismatch");
    Tape<T> t;
    t.grad_enabled = false;
    return t.val(head(t, t.constant(rows)).id);
  }

  static Mat<T> row_softmax(const Mat<T>& logits) {
    Mat<T> p(logits.rows(), logits.cols());
    for (int r = 0; r < logits.rows(); ++r) {
      double mx = static_cast<double>(logits(r, 0));
      for (int c = 1; c < logits.cols(); ++c)
        mx = std::max(mx, static_cast<double>(logits(r, c)));
      double total = 0;
      for (int c = 0; c < logits.cols(); ++c) {
        const double e = std::exp(static_cast<double>(logits(r, c)) - mx);
        p(r, c) = static_cast<T>(e);
        total += e;
      }
      for (int c = 0; c < logits.cols(); ++c) p(r, c) = static_cast<T>(p(r, c) / total);
    }
    return p;
  }

  int sample_row(const Mat<T>& logits, int row, Rng& rng) {
    const Mat<T> p = row_softmax(logits);
    const double x = rng.uniform01();
    double acc = 0;
    for (int a = 0; a < p.cols(); ++a) {
      acc += static_cast<double>(p(row, a));
      if (x < acc) return a;
    }
    return p.cols() - 1;
  }

  static void copy_params(ParamStore<T>& from, ParamStore<T>& to) {
    if (from.count() != to.count()) throw RuntimeError("agent: param store shape mismatch");
    for (size_t i = 0; i < from.count(); ++i) {
      if (!from.at(i).value.same_shape(to.at(i).value))
        throw RuntimeError("agent: param shape mismatch");
      to.at(i).value = from.at(i).value;
    }
  }

  void decay_slow_critic() {
    const T d = static_cast<T>(cfg_.slow_decay);
    for (size_t i = 0; i < critic_ps_.count(); ++i) {
      Mat<T>& slow = slow_ps_.at(i).value;
      const Mat<T>& fast = critic_ps_.at(i).value;
      for (size_t j = 0; j < slow.size(); ++j)
        slow.data()[j] = d * slow.data()[j] + (T(1) - d) * fast.data()[j];
    }
  }

  void check_trajectory(const DreamTrajectory<T>& traj) const {
    const int H = traj.horizon();
    if (H < 1) throw RuntimeError("agent update: empty trajectory");
    if (traj.states.size() != static_cast<size_t>(H) + 1 ||
        traj.rewards.size() != static_cast<size_t>(H) ||
        traj.continues.size() != static_cast<size_t>(H))
      throw RuntimeError("agent update: trajectory field lengths disagree");
    const int B = traj.batch();
    if (B < 1) throw RuntimeError("agent update: empty batch");
    for (const auto& s : traj.states)
      if (s.rows() != B || s.cols() != cfg_.state_width)
        throw RuntimeError("agent update: state shape mismatch");
    for (int k = 0; k < H; ++k) {
      const auto& r = traj.rewards[static_cast<size_t>(k)];
      const auto& c = traj.continues[static_cast<size_t>(k)];
      if (r.rows() != B || r.cols() != 1 || c.rows() != B || c.cols() != 1)
        throw RuntimeError("agent update: reward/continue shape mismatch");
      if (!r.all_finite() || !c.all_finite())
        throw NumericsError("agent update: non-finite trajectory");
      if (traj.actions[static_cast<size_t>(k)].size() != static_cast<size_t>(B))
        throw RuntimeError("agent update: action count mismatch");
      for (int b = 0; b < B; ++b) {
        const double cv = static_cast<double>(c(b, 0));
        if (cv < 0.0 || cv > 1.0)
          throw RuntimeError("agent update: continue probability out of range");
        const int a = traj.actions[static_cast<size_t>(k)][static_cast<size_t>(b)];
        if (a < 0 || a >= cfg_.action_count)
          throw RuntimeError("agent update: action out of range");
      }
    }
  }

  AgentConfig cfg_;
  ParamStore<T> actor_ps_, critic_ps_, slow_ps_;
  MlpP<T> actor_, critic_, slow_critic_;
  Adam<T> actor_opt_, critic_opt_;
};

}  // namespace wmar
