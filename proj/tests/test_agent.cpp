#include <cmath>
#include <map>
#include <string>
#include <vector>

#include "doctest.h"
#include "wmar/agent.hpp"
#include "wmar/errors.hpp"
#include "wmar/rssm.hpp"

using namespace wmar;

namespace {

AgentConfig bandit_config(int state_width, int actions) {
  AgentConfig cfg;
  cfg.state_width = state_width;
  cfg.action_count = actions;
  cfg.hidden_width = 8;
  cfg.hidden_layers = 1;
  cfg.horizon = 1;
  return cfg;
}

Mat<double> row3(double a, double b, double c) {
  return Mat<double>::from(1, 3, {a, b, c});
}

// Independent expansion of the lambda-return recursion: the discounted sum
// of per-step terms r + d*(1-lambda)*v with a lambda*d weighted prefix, plus
// the fully weighted bootstrap tail.
double expanded_return(const std::vector<double>& r, const std::vector<double>& v,
                       const std::vector<double>& c, double gamma, double lam,
                       double bootstrap, size_t k) {
  double acc = 0.0, w = 1.0;
  for (size_t m = k; m < r.size(); ++m) {
    const double d = gamma * c[m];
    acc += w * (r[m] + d * (1.0 - lam) * v[m]);
    w *= lam * d;
  }
  return acc + w * bootstrap;
}

// Single fixed-state, single-step trajectory with no continuation: its
// lambda-return target is exactly the reward, so the advantage and critic
// target are fully under the test's control.
template <typename T>
DreamTrajectory<T> bandit_trajectory(const Mat<T>& state, int action, T reward) {
  DreamTrajectory<T> traj;
  traj.states.push_back(state);
  traj.states.push_back(state);
  traj.actions.push_back({action});
  traj.log_probs.push_back(Mat<T>::zeros(1, 1));
  traj.rewards.push_back(Mat<T>::full(1, 1, reward));
  traj.continues.push_back(Mat<T>::zeros(1, 1));
  return traj;
}

RssmConfig tiny_wm_config() {
  RssmConfig cfg;
  cfg.obs_width = 4;
  cfg.action_count = 3;
  cfg.latent_units = 2;
  cfg.latent_classes = 3;
  cfg.deter_width = 6;
  cfg.embed_width = 5;
  cfg.hidden_width = 8;
  cfg.hidden_layers = 1;
  return cfg;
}

template <typename T>
std::vector<uint8_t> agent_bytes(ActorCritic<T>& agent) {
  BinWriter w;
  agent.save(w);
  return w.bytes();
}

}  // namespace

TEST_CASE("lambda returns reproduce the worked two-step example") {
  // rewards [1, 1], gamma 0.9, lambda 1, zero bootstrap -> [1.9, 1].
  std::vector<Mat<double>> rewards = {Mat<double>::full(1, 1, 1.0), Mat<double>::full(1, 1, 1.0)};
  std::vector<Mat<double>> values = {Mat<double>::full(1, 1, 5.0), Mat<double>::full(1, 1, -3.0)};
  std::vector<Mat<double>> continues = {Mat<double>::full(1, 1, 1.0), Mat<double>::full(1, 1, 1.0)};
  const auto ret = lambda_returns(rewards, values, continues, 0.9, 1.0, Mat<double>::zeros(1, 1));
  REQUIRE(ret.size() == 2);
  CHECK(ret[1](0, 0) == doctest::Approx(1.0).epsilon(1e-12));
  CHECK(ret[0](0, 0) == doctest::Approx(1.9).epsilon(1e-12));
}

TEST_CASE("lambda zero gives one-step TD targets") {
  Rng rng(3);
  std::vector<Mat<double>> r, v, c;
  for (int k = 0; k < 6; ++k) {
    r.push_back(Mat<double>::full(1, 1, rng.uniform01() * 2 - 1));
    v.push_back(Mat<double>::full(1, 1, rng.uniform01() * 2 - 1));
    c.push_back(Mat<double>::full(1, 1, rng.uniform01()));
  }
  const auto ret = lambda_returns(r, v, c, 0.95, 0.0, Mat<double>::full(1, 1, 9.0));
  for (int k = 0; k < 6; ++k) {
    const double expect = r[static_cast<size_t>(k)](0, 0) +
                          0.95 * c[static_cast<size_t>(k)](0, 0) * v[static_cast<size_t>(k)](0, 0);
    CHECK(ret[static_cast<size_t>(k)](0, 0) == doctest::Approx(expect).epsilon(1e-12));
  }
}

TEST_CASE("lambda returns match a brute-force expansion oracle") {
  for (uint64_t trial = 0; trial < 20; ++trial) {
    Rng rng(100 + trial);
    const int H = 16, B = 3;
    std::vector<Mat<double>> r, v, c;
    for (int k = 0; k < H; ++k) {
      Mat<double> rk(B, 1), vk(B, 1), ck(B, 1);
      for (int b = 0; b < B; ++b) {
        rk(b, 0) = rng.uniform01() * 2 - 1;
        vk(b, 0) = rng.uniform01() * 2 - 1;
        ck(b, 0) = rng.uniform01();
      }
      r.push_back(rk);
      v.push_back(vk);
      c.push_back(ck);
    }
    Mat<double> boot(B, 1);
    for (int b = 0; b < B; ++b) boot(b, 0) = rng.uniform01() * 2 - 1;

    const auto ret = lambda_returns(r, v, c, 0.95, 0.95, boot);
    for (int b = 0; b < B; ++b) {
      std::vector<double> rr, vv, cc;
      for (int k = 0; k < H; ++k) {
        rr.push_back(r[static_cast<size_t>(k)](b, 0));
        vv.push_back(v[static_cast<size_t>(k)](b, 0));
        cc.push_back(c[static_cast<size_t>(k)](b, 0));
      }
      for (int k = 0; k < H; ++k) {
        const double expect =
            expanded_return(rr, vv, cc, 0.95, 0.95, boot(b, 0), static_cast<size_t>(k));
        CHECK(std::abs(ret[static_cast<size_t>(k)](b, 0) - expect) < 1e-9);
      }
    }
  }
}

TEST_CASE("lambda returns reject mismatched lengths") {
  std::vector<Mat<double>> two = {Mat<double>::zeros(1, 1), Mat<double>::zeros(1, 1)};
  std::vector<Mat<double>> one = {Mat<double>::zeros(1, 1)};
  CHECK_THROWS_AS(lambda_returns(two, one, two, 0.9, 0.9, Mat<double>::zeros(1, 1)),
                  RuntimeError);
  CHECK_THROWS_AS(lambda_returns(two, two, two, 0.9, 0.9, Mat<double>::zeros(2, 1)),
                  RuntimeError);
}

TEST_CASE("reward scaling matches the published calibration table") {
  const RewardScaleTable table = RewardScaleTable::known();
  CHECK(scale_reward(100.0, "crazy_climber", table) == doctest::Approx(0.1).epsilon(1e-9));
  CHECK(scale_reward(20.0, "ms_pacman", table) == doctest::Approx(1.0).epsilon(1e-9));
  CHECK(scale_reward(7.5, "boxing", table) == doctest::Approx(7.5).epsilon(1e-12));
  CHECK_THROWS_AS(scale_reward(1.0, "no_such_task", table), RuntimeError);
}

TEST_CASE("reward scale tables cover each suite and reject bad values") {
  for (const std::string suite : {"shared4", "distinct4"}) {
    const SuiteSpec spec = suite_spec(suite);
    const RewardScaleTable table = RewardScaleTable::for_suite(spec);
    for (int k = 0; k < spec.task_count(); ++k) {
      const double s = table.at(spec.task_labels[static_cast<size_t>(k)]);
      CHECK(s == doctest::Approx(spec.reward_scales[static_cast<size_t>(k)]).epsilon(1e-9));
    }
  }
  RewardScaleTable bad;
  bad.scales["task"] = 0.0;
  CHECK_THROWS_AS(bad.validate(), ConfigError);
}

TEST_CASE("dream rollouts have the stated shapes and are seed-deterministic") {
  const RssmConfig wc = tiny_wm_config();
  WorldModel<float> wm(wc, 5);
  AgentConfig ac;
  ac.state_width = wc.state_width();
  ac.action_count = wc.action_count;
  ac.hidden_width = 8;
  ac.hidden_layers = 1;
  ActorCritic<float> agent(ac, 9);

  // Start states from the posterior filter, as in training.
  std::vector<WorldModel<float>::StateValue> starts;
  Rng collect(3);
  for (int i = 0; i < 4; ++i) {
    WorldModel<float>::StateValue s{Mat<float>::zeros(1, wc.deter_width),
                                    Mat<float>::zeros(1, wc.latent_width())};
    const auto o =
        wm.observe_step(s, 0, Mat<float>::full(1, 4, 0.1f * static_cast<float>(i)), true, collect);
    starts.push_back(o.state);
  }

  SUBCASE("one-step rollout has exactly one transition per start") {
    Rng rng(7);
    const auto traj = agent.dream_rollout(wm, starts, 1, rng);
    CHECK(traj.states.size() == 2);
    CHECK(traj.actions.size() == 1);
    CHECK(traj.rewards.size() == 1);
    CHECK(traj.continues.size() == 1);
    CHECK(traj.states[0].rows() == 4);
    CHECK(traj.states[0].cols() == wc.state_width());
    CHECK(traj.rewards[0].rows() == 4);
    CHECK(traj.actions[0].size() == 4);
  }

  SUBCASE("fixed seed reproduces the trajectory bit for bit") {
    Rng r1(11), r2(11), r3(12);
    const auto a = agent.dream_rollout(wm, starts, 6, r1);
    const auto b = agent.dream_rollout(wm, starts, 6, r2);
    const auto c = agent.dream_rollout(wm, starts, 6, r3);
    bool same = true, differs = false;
    for (size_t k = 0; k < a.actions.size(); ++k) {
      same = same && a.actions[k] == b.actions[k];
      differs = differs || a.actions[k] != c.actions[k];
      for (int bb = 0; bb < 4; ++bb)
        same = same && a.rewards[k](bb, 0) == b.rewards[k](bb, 0);
    }
    for (size_t k = 0; k < a.states.size(); ++k)
      for (int bb = 0; bb < 4; ++bb)
        for (int cc = 0; cc < a.states[k].cols(); ++cc)
          same = same && a.states[k](bb, cc) == b.states[k](bb, cc);
    CHECK(same);
    CHECK(differs);
  }

  SUBCASE("a degenerate actor always picks its favored action") {
    Param<float>* b = agent.actor_params().find("actor.out.b");
    REQUIRE(b != nullptr);
    b->value(0, 2) = 1e9f;
    Rng rng(19);
    const auto traj = agent.dream_rollout(wm, starts, 5, rng);
    for (const auto& step_actions : traj.actions)
      for (int a : step_actions) CHECK(a == 2);
  }
}

TEST_CASE("reinforce gradients match the exact policy gradient within 3 SE") {
  // Linear actor so the logits gradient lands directly on the bias and the
  // weight gradient is its outer product with the state.
  AgentConfig cfg = bandit_config(3, 3);
  cfg.hidden_layers = 0;
  cfg.entropy_coef = 0.0;
  ActorCritic<double> agent(cfg, 31);
  const Mat<double> state = row3(0.4, -0.2, 0.7);
  const std::vector<double> action_rewards = {1.0, -0.5, 0.25};

  const Mat<double> probs = agent.policy_probs(state);
  const double baseline = agent.slow_values(state)(0, 0);
  double mean_adv = 0.0;
  std::vector<double> adv(3);
  for (int a = 0; a < 3; ++a) {
    adv[static_cast<size_t>(a)] = action_rewards[static_cast<size_t>(a)] - baseline;
    mean_adv += probs(0, a) * adv[static_cast<size_t>(a)];
  }
  // Exact gradient of the expected actor loss -sum_a pi(a) A(a) with respect
  // to the logits: -pi_j (A_j - sum_a pi_a A_a). Hand-derived closed form.
  std::vector<double> exact_b(3);
  for (int j = 0; j < 3; ++j)
    exact_b[static_cast<size_t>(j)] = -probs(0, j) * (adv[static_cast<size_t>(j)] - mean_adv);

  Param<double>* bp = agent.actor_params().find("actor.out.b");
  Param<double>* wp = agent.actor_params().find("actor.out.w");
  REQUIRE(bp != nullptr);
  REQUIRE(wp != nullptr);

  const int n = 10000;
  Rng rng(77);
  std::vector<double> sum_b(3, 0.0), sumsq_b(3, 0.0);
  std::vector<double> sum_w(9, 0.0), sumsq_w(9, 0.0);
  for (int it = 0; it < n; ++it) {
    const int a = agent.act(state, rng, false);
    const auto traj =
        bandit_trajectory<double>(state, a, action_rewards[static_cast<size_t>(a)]);
    agent.accumulate_gradients(traj);
    for (int j = 0; j < 3; ++j) {
      const double g = bp->grad(0, j);
      sum_b[static_cast<size_t>(j)] += g;
      sumsq_b[static_cast<size_t>(j)] += g * g;
    }
    for (int j = 0; j < 9; ++j) {
      const double g = wp->grad.data()[j];
      sum_w[static_cast<size_t>(j)] += g;
      sumsq_w[static_cast<size_t>(j)] += g * g;
    }
  }
  for (int j = 0; j < 3; ++j) {
    const double mean = sum_b[static_cast<size_t>(j)] / n;
    const double var =
        (sumsq_b[static_cast<size_t>(j)] / n - mean * mean) / (n - 1) * n;
    const double se = std::sqrt(var / n);
    CHECK(std::abs(mean - exact_b[static_cast<size_t>(j)]) <= 3.0 * se + 1e-12);
  }
  for (int j = 0; j < 9; ++j) {
    const double mean = sum_w[static_cast<size_t>(j)] / n;
    const double exact = state(0, j / 3) * exact_b[static_cast<size_t>(j % 3)];
    const double var =
        (sumsq_w[static_cast<size_t>(j)] / n - mean * mean) / (n - 1) * n;
    const double se = std::sqrt(var / n);
    CHECK(std::abs(mean - exact) <= 3.0 * se + 1e-12);
  }
}

TEST_CASE("zero advantage reduces the actor update to an entropy push") {
  AgentConfig cfg = bandit_config(3, 2);
  cfg.entropy_coef = 0.05;
  ActorCritic<double> agent(cfg, 41);
  const Mat<double> state = row3(0.3, -0.6, 0.2);

  const double ent0 = agent.policy_entropy(state);
  CHECK(ent0 >= 0.0);
  CHECK(ent0 <= std::log(2.0) + 1e-12);
  for (int it = 0; it < 50; ++it) {
    Rng rng(200 + static_cast<uint64_t>(it));
    const int a = agent.act(state, rng, false);
    // Reward equal to the baseline makes the advantage exactly zero.
    const double reward = agent.slow_values(state)(0, 0);
    agent.update(bandit_trajectory<double>(state, a, reward), 1e-2, 100.0);
  }
  const double ent1 = agent.policy_entropy(state);
  CHECK(ent1 > ent0);
  CHECK(ent1 <= std::log(2.0) + 1e-12);
}

TEST_CASE("a positive advantage raises the taken action's probability") {
  AgentConfig cfg = bandit_config(3, 2);
  cfg.entropy_coef = 0.0;
  ActorCritic<double> agent(cfg, 43);
  const Mat<double> state = row3(0.1, 0.5, -0.4);
  const double before = agent.policy_probs(state)(0, 0);
  const double reward = agent.slow_values(state)(0, 0) + 1.0;
  agent.update(bandit_trajectory<double>(state, 0, reward), 1e-2, 100.0);
  const double after = agent.policy_probs(state)(0, 0);
  CHECK(after > before);
}

TEST_CASE("the critic converges to constant targets") {
  AgentConfig cfg = bandit_config(3, 2);
  ActorCritic<double> agent(cfg, 47);
  const Mat<double> state = row3(0.2, 0.8, -0.1);
  for (int it = 0; it < 500; ++it) {
    Rng rng(300 + static_cast<uint64_t>(it));
    const int a = agent.act(state, rng, false);
    agent.update(bandit_trajectory<double>(state, a, 2.5), 1e-2, 100.0);
  }
  CHECK(std::abs(agent.values(state)(0, 0) - 2.5) < 1e-2);
}

TEST_CASE("scaling rewards and entropy together keeps the greedy action") {
  const Mat<double> state = row3(0.25, -0.3, 0.55);
  auto converged_argmax = [&](double reward_scale, double eta) {
    AgentConfig cfg = bandit_config(3, 2);
    cfg.entropy_coef = eta;
    ActorCritic<double> agent(cfg, 53);
    for (int it = 0; it < 400; ++it) {
      Rng rng(400 + static_cast<uint64_t>(it));
      const int a = agent.act(state, rng, false);
      const double reward = (a == 0 ? 1.0 : 0.5) * reward_scale;
      agent.update(bandit_trajectory<double>(state, a, reward), 1e-2, 100.0);
    }
    const Mat<double> p = agent.policy_probs(state);
    return p(0, 0) > p(0, 1) ? 0 : 1;
  };
  CHECK(converged_argmax(1.0, 3e-3) == 0);
  CHECK(converged_argmax(100.0, 3e-5) == 0);
}

TEST_CASE("the update trains the agent but never touches the world model") {
  const RssmConfig wc = tiny_wm_config();
  WorldModel<float> wm(wc, 5);
  AgentConfig ac;
  ac.state_width = wc.state_width();
  ac.action_count = wc.action_count;
  ac.hidden_width = 8;
  ac.hidden_layers = 1;
  ActorCritic<float> agent(ac, 9);

  std::vector<WorldModel<float>::StateValue> starts;
  Rng collect(3);
  WorldModel<float>::StateValue s{Mat<float>::zeros(1, wc.deter_width),
                                  Mat<float>::zeros(1, wc.latent_width())};
  starts.push_back(wm.observe_step(s, 0, Mat<float>::full(1, 4, 0.2f), true, collect).state);
  starts.push_back(wm.observe_step(s, 0, Mat<float>::full(1, 4, 0.7f), true, collect).state);

  BinWriter before;
  wm.save(before);
  const std::vector<uint8_t> actor_before = [&] {
    BinWriter w;
    agent.save(w);
    return w.bytes();
  }();

  Rng rng(23);
  const auto traj = agent.dream_rollout(wm, starts, 4, rng);
  const auto diag = agent.update(traj, 1e-3f, 100.0f);
  CHECK(std::isfinite(diag.actor_loss));
  CHECK(std::isfinite(diag.critic_loss));
  CHECK(diag.entropy >= 0.0);
  CHECK(diag.entropy <= std::log(3.0) + 1e-6);

  BinWriter after;
  wm.save(after);
  CHECK(before.bytes() == after.bytes());
  BinWriter agent_after;
  agent.save(agent_after);
  CHECK(agent_after.bytes() != actor_before);
}

TEST_CASE("agent checkpoints round trip bit-exactly and keep training equal") {
  AgentConfig cfg = bandit_config(3, 2);
  ActorCritic<float> a(cfg, 61);
  const Mat<float> state = Mat<float>::from(1, 3, {0.2f, -0.5f, 0.9f});
  for (int it = 0; it < 5; ++it) {
    Rng rng(500 + static_cast<uint64_t>(it));
    const int act = a.act(state, rng, false);
    a.update(bandit_trajectory<float>(state, act, 1.0f), 1e-3f, 100.0f);
  }
  BinWriter w1;
  a.save(w1);

  ActorCritic<float> b(cfg, 62);
  BinReader r(w1.bytes());
  b.load(r);
  CHECK(r.at_end());
  CHECK(agent_bytes(b) == w1.bytes());

  // Identical further training keeps both copies byte-identical.
  a.update(bandit_trajectory<float>(state, 1, 0.5f), 1e-3f, 100.0f);
  b.update(bandit_trajectory<float>(state, 1, 0.5f), 1e-3f, 100.0f);
  CHECK(agent_bytes(a) == agent_bytes(b));

  AgentConfig other = cfg;
  other.action_count = 3;
  ActorCritic<float> c(other, 63);
  BinReader r2(w1.bytes());
  CHECK_THROWS_AS(c.load(r2), RuntimeError);
}

TEST_CASE("updates reject malformed or non-finite trajectories") {
  AgentConfig cfg = bandit_config(3, 2);
  ActorCritic<double> agent(cfg, 71);
  const Mat<double> state = row3(0.1, 0.2, 0.3);

  auto nan_traj = bandit_trajectory<double>(state, 0, 1.0);
  nan_traj.rewards[0](0, 0) = std::nan("");
  CHECK_THROWS_AS(agent.update(nan_traj, 1e-3, 100.0), NumericsError);

  auto bad_cont = bandit_trajectory<double>(state, 0, 1.0);
  bad_cont.continues[0](0, 0) = 1.5;
  CHECK_THROWS_AS(agent.update(bad_cont, 1e-3, 100.0), RuntimeError);

  auto bad_action = bandit_trajectory<double>(state, 5, 1.0);
  CHECK_THROWS_AS(agent.update(bad_action, 1e-3, 100.0), RuntimeError);

  auto empty = DreamTrajectory<double>{};
  CHECK_THROWS_AS(agent.update(empty, 1e-3, 100.0), RuntimeError);
}

TEST_CASE("agent config validation rejects out-of-range fields") {
  AgentConfig good = bandit_config(3, 2);
  good.validate();

  AgentConfig c = good;
  c.state_width = 0;
  CHECK_THROWS_AS(c.validate(), ConfigError);
  c = good;
  c.action_count = 1;
  CHECK_THROWS_AS(c.validate(), ConfigError);
  c = good;
  c.gamma = 1.0;
  CHECK_THROWS_AS(c.validate(), ConfigError);
  c = good;
  c.gamma = 0.0;
  CHECK_THROWS_AS(c.validate(), ConfigError);
  c = good;
  c.lambda = 1.5;
  CHECK_THROWS_AS(c.validate(), ConfigError);
  c = good;
  c.entropy_coef = -1e-9;
  CHECK_THROWS_AS(c.validate(), ConfigError);
  c = good;
  c.horizon = 0;
  CHECK_THROWS_AS(c.validate(), ConfigError);
  c = good;
  c.slow_decay = 1.0;
  CHECK_THROWS_AS(c.validate(), ConfigError);
  c = good;
  c.hidden_layers = -1;
  CHECK_THROWS_AS(c.validate(), ConfigError);
  c = good;
  c.hidden_layers = 0;  // linear heads are allowed
  c.validate();
}
