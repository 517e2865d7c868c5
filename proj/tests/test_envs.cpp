#include <algorithm>
#include <array>
#include <cmath>
#include <map>
#include <queue>
#include <set>
#include <vector>

#include "doctest.h"
#include "wmar/envs.hpp"
#include "wmar/errors.hpp"
#include "wmar/rng.hpp"

using namespace wmar;

namespace {

// Independent shortest-path oracle over the gridworld: distance to goal for
// every free cell, or -1 if unreachable.
std::vector<std::vector<int>> bfs_distances(const std::vector<std::pair<int, int>>& walls,
                                            int size, std::pair<int, int> goal) {
  std::set<std::pair<int, int>> wall_set(walls.begin(), walls.end());
  std::vector<std::vector<int>> dist(static_cast<size_t>(size),
                                     std::vector<int>(static_cast<size_t>(size), -1));
  std::queue<std::pair<int, int>> q;
  dist[static_cast<size_t>(goal.first)][static_cast<size_t>(goal.second)] = 0;
  q.push(goal);
  const int dr[4] = {-1, 1, 0, 0};
  const int dc[4] = {0, 0, -1, 1};
  while (!q.empty()) {
    auto [r, c] = q.front();
    q.pop();
    for (int k = 0; k < 4; ++k) {
      const int nr = r + dr[k];
      const int nc = c + dc[k];
      if (nr < 0 || nr >= size || nc < 0 || nc >= size) continue;
      if (wall_set.count({nr, nc})) continue;
      if (dist[static_cast<size_t>(nr)][static_cast<size_t>(nc)] != -1) continue;
      dist[static_cast<size_t>(nr)][static_cast<size_t>(nc)] =
          dist[static_cast<size_t>(r)][static_cast<size_t>(c)] + 1;
      q.push({nr, nc});
    }
  }
  return dist;
}

// Gridworld action (up, down, left, right) that moves one step closer to
// the goal according to the oracle distances.
int greedy_action(const std::vector<std::vector<int>>& dist, int r, int c) {
  const int dr[4] = {-1, 1, 0, 0};
  const int dc[4] = {0, 0, -1, 1};
  const int here = dist[static_cast<size_t>(r)][static_cast<size_t>(c)];
  for (int k = 0; k < 4; ++k) {
    const int nr = r + dr[k];
    const int nc = c + dc[k];
    if (nr < 0 || nr >= 6 || nc < 0 || nc >= 6) continue;
    const int d = dist[static_cast<size_t>(nr)][static_cast<size_t>(nc)];
    if (d != -1 && d == here - 1) return k;
  }
  return -1;
}

bool obs_in_unit_range(const std::vector<float>& obs) {
  return std::all_of(obs.begin(), obs.end(), [](float v) {
    return std::isfinite(v) && v >= 0.0f && v <= 1.0f;
  });
}

}  // namespace

TEST_CASE("gridworld layout is fixed, interior, connected, and shared by all palettes") {
  GridWorld base(0, 1);
  REQUIRE(base.walls().size() == 4);
  for (const auto& [r, c] : base.walls()) {
    CHECK(r >= 1);
    CHECK(r <= 4);
    CHECK(c >= 1);
    CHECK(c <= 4);
  }
  const auto dist = bfs_distances(base.walls(), 6, base.goal());
  std::set<std::pair<int, int>> wall_set(base.walls().begin(), base.walls().end());
  for (int r = 0; r < 6; ++r) {
    for (int c = 0; c < 6; ++c) {
      if (wall_set.count({r, c})) continue;
      CHECK(dist[static_cast<size_t>(r)][static_cast<size_t>(c)] >= 0);
    }
  }
  for (int p = 1; p < 4; ++p) {
    GridWorld other(p, 99);
    CHECK(other.walls() == base.walls());
  }
}

TEST_CASE("gridworld optimal play earns 1.0 in exactly the oracle distance") {
  GridWorld env(0, 42);
  const auto dist = bfs_distances(env.walls(), 6, env.goal());
  for (int episode = 0; episode < 50; ++episode) {
    env.reset();
    const auto [sr, sc] = env.agent();
    const int d = dist[static_cast<size_t>(sr)][static_cast<size_t>(sc)];
    REQUIRE(d > 0);
    float total = 0.0f;
    int steps = 0;
    bool done = false;
    while (!done) {
      const auto [r, c] = env.agent();
      const int a = greedy_action(dist, r, c);
      REQUIRE(a >= 0);
      const EnvStep out = env.step(a);
      total += out.reward;
      done = out.done;
      ++steps;
    }
    CHECK(total == 1.0f);
    CHECK(steps == d);
  }
}

TEST_CASE("gridworld blocked moves stay put and never-reaching policies truncate") {
  GridWorld env(0, 7);
  for (int episode = 0; episode < 10; ++episode) {
    env.reset();
    float total = 0.0f;
    int steps = 0;
    bool done = false;
    while (!done) {
      // Always move up: the column never changes toward the goal corner.
      const EnvStep out = env.step(0);
      total += out.reward;
      done = out.done;
      ++steps;
      const auto [r, c] = env.agent();
      REQUIRE(r >= 0);
      REQUIRE(c >= 0);
    }
    CHECK(total == 0.0f);
    CHECK(steps == GridWorld::kMaxEpisodeSteps);
    CHECK(env.steps_taken() == GridWorld::kMaxEpisodeSteps);
  }
}

TEST_CASE("gridworld resets cover every free non-goal cell") {
  GridWorld env(0, 3);
  std::set<std::pair<int, int>> starts;
  for (int i = 0; i < 2000; ++i) {
    env.reset();
    starts.insert(env.agent());
  }
  // 36 cells minus 4 walls minus the goal.
  CHECK(starts.size() == 31);
  CHECK(starts.count(env.goal()) == 0);
  for (const auto& w : env.walls()) CHECK(starts.count(w) == 0);
}

TEST_CASE("palettes are invertible remaps of the same underlying episode") {
  // Same seed gives the same start sequence; identical action scripts must
  // produce identical rewards and undo-able observations.
  for (int p = 1; p < 4; ++p) {
    GridWorld plain(0, 55);
    GridWorld remapped(p, 55);
    Rng script(p * 31 + 1);
    std::vector<float> obs_a = plain.reset();
    std::vector<float> obs_b = remapped.reset();
    REQUIRE(plain.agent() == remapped.agent());
    const auto& pal = remapped.palette();
    bool any_difference = false;
    for (int t = 0; t < 300; ++t) {
      // Undo affine then channel permutation; must recover the plain view.
      for (int cell = 0; cell < 9; ++cell) {
        for (int ch = 0; ch < 3; ++ch) {
          const int idx = cell * 3 + ch;
          const float undone = (obs_b[static_cast<size_t>(idx)] -
                                pal.offset[static_cast<size_t>(idx)]) /
                               pal.scale[static_cast<size_t>(idx)];
          const int src = cell * 3 + pal.channel_perm[static_cast<size_t>(ch)];
          REQUIRE(std::abs(undone - obs_a[static_cast<size_t>(src)]) < 1e-5f);
        }
      }
      if (obs_a != obs_b) any_difference = true;
      const int a = script.uniform_int(4);
      const EnvStep sa = plain.step(a);
      const EnvStep sb = remapped.step(a);
      REQUIRE(sa.reward == sb.reward);
      REQUIRE(sa.done == sb.done);
      obs_a = sa.observation;
      obs_b = sb.observation;
      if (sa.done) {
        obs_a = plain.reset();
        obs_b = remapped.reset();
        REQUIRE(plain.agent() == remapped.agent());
      }
    }
    CHECK(any_difference);
  }
}

TEST_CASE("chain5 walk: five toward-moves reach the goal for reward 1") {
  auto env = make_task_env("distinct4", 0, 1);
  env->reset();
  for (int t = 1; t <= 5; ++t) {
    const EnvStep out = env->step(1);
    if (t < 5) {
      CHECK(out.reward == 0.0f);
      CHECK_FALSE(out.done);
    } else {
      CHECK(out.reward == 1.0f);
      CHECK(out.done);
    }
  }
}

TEST_CASE("chain walk extra actions are no-ops and truncation kicks in") {
  ChainWalk env(6, 0, 5, 1.0f, 1, 0, 16, 28, 0, "chain5");
  env.reset();
  CHECK(env.position() == 0);
  env.step(2);
  CHECK(env.position() == 0);
  env.step(3);
  CHECK(env.position() == 0);
  env.step(1);
  CHECK(env.position() == 1);
  env.step(0);
  CHECK(env.position() == 0);
  env.step(0);  // already at the left end: clamped
  CHECK(env.position() == 0);
  int steps = 5;
  bool done = false;
  while (!done) {
    done = env.step(2).done;
    ++steps;
  }
  CHECK(steps == 16);
}

TEST_CASE("chain_rev6 walk: six toward-moves reach the goal for reward 2") {
  auto env = make_task_env("distinct4", 3, 1);
  env->reset();
  for (int t = 1; t <= 6; ++t) {
    const EnvStep out = env->step(3);
    if (t < 6) {
      CHECK(out.reward == 0.0f);
      CHECK_FALSE(out.done);
    } else {
      CHECK(out.reward == 2.0f);
      CHECK(out.done);
    }
  }
  // Action 1, the chain5 progress button, does nothing here.
  ChainWalk rev(7, 6, 0, 2.0f, 3, 2, 16, 28, 0, "chain_rev6");
  rev.reset();
  rev.step(1);
  CHECK(rev.position() == 6);
}

TEST_CASE("bandit pays exactly on context match and ends after its length") {
  ContextBandit env(4, 8, 100.0f, 28, 5);
  std::set<int> contexts_seen;
  for (int episode = 0; episode < 100; ++episode) {
    env.reset();
    const int ctx = env.context();
    contexts_seen.insert(ctx);
    for (int t = 1; t <= 8; ++t) {
      const int action = t % 4;
      const EnvStep out = env.step(action);
      CHECK(out.reward == (action == ctx ? 100.0f : 0.0f));
      CHECK(out.done == (t == 8));
      CHECK(env.context() == ctx);
    }
  }
  CHECK(contexts_seen == std::set<int>{0, 1});
}

TEST_CASE("bandit random-policy mean is payout/k") {
  // Uniform over k actions against a binary context hits with probability
  // 1/k: mean per-step reward is 25 for k=4 and 50 (half the payout) for
  // the two-action variant.
  for (const int k : {4, 2}) {
    ContextBandit env(k, 8, 100.0f, 28, 9);
    Rng rng(17);
    double total = 0.0;
    int steps = 0;
    for (int episode = 0; episode < 2000; ++episode) {
      env.reset();
      bool done = false;
      while (!done) {
        const EnvStep out = env.step(rng.uniform_int(k));
        total += out.reward;
        done = out.done;
        ++steps;
      }
    }
    const double mean = total / steps;
    const double expected = 100.0 / k;
    // Bernoulli(1/k) scaled by 100: three sigma over ~16000 steps.
    const double sigma = 100.0 * std::sqrt((1.0 / k) * (1.0 - 1.0 / k) / steps);
    CHECK(std::abs(mean - expected) < 3.0 * sigma);
  }
}

TEST_CASE("keydoor requires the key before the door pays") {
  KeyDoor env(11);
  for (int episode = 0; episode < 20; ++episode) {
    env.reset();
    CHECK_FALSE(env.has_key());
    float total = 0.0f;
    int steps = 0;
    // Walk to the key (row 0, rightmost column) with up/right moves, then
    // down to the door. Actions are the rotated mapping: 0=right, 1=up,
    // 2=left, 3=down.
    while (env.agent() != env.key_cell()) {
      const auto [r, c] = env.agent();
      const EnvStep out = env.step(r > 0 ? 1 : 0);
      total += out.reward;
      REQUIRE_FALSE(out.done);
      ++steps;
    }
    CHECK(env.has_key());
    bool done = false;
    while (!done) {
      const EnvStep out = env.step(3);
      total += out.reward;
      done = out.done;
      ++steps;
    }
    CHECK(total == 1.0f);
    CHECK(env.agent() == env.door_cell());
    CHECK(steps <= KeyDoor::kMaxEpisodeSteps);
  }
}

TEST_CASE("keydoor door without key is inert and episodes truncate") {
  KeyDoor env(13);
  env.reset();
  // Drive to the door corner without visiting the key: go down first, then
  // right along the bottom row. The key sits at the top-right corner.
  float total = 0.0f;
  bool done = false;
  int steps = 0;
  while (!done) {
    const auto [r, c] = env.agent();
    int a = 3;          // down
    if (r == KeyDoor::kSize - 1) a = c < KeyDoor::kSize - 1 ? 0 : 2;  // shuffle along the bottom
    const EnvStep out = env.step(a);
    total += out.reward;
    done = out.done;
    ++steps;
    CHECK_FALSE(env.has_key());
  }
  CHECK(total == 0.0f);
  CHECK(steps == KeyDoor::kMaxEpisodeSteps);
}

TEST_CASE("keydoor observations are value-inverted indicators") {
  KeyDoor env(3);
  const auto obs = env.reset();
  REQUIRE(obs.size() == 28);
  CHECK(obs_in_unit_range(obs));
  int zeros_in_position_block = 0;
  for (int i = 0; i < 25; ++i) {
    if (obs[static_cast<size_t>(i)] == 0.0f) ++zeros_in_position_block;
  }
  CHECK(zeros_in_position_block == 1);  // inverted one-hot: agent cell is the single 0
  CHECK(obs[25] == 1.0f);               // no key yet
  CHECK(obs[26] == 0.0f);               // key still on the board
  CHECK(obs[27] == 1.0f);               // step 0 of the episode
}

TEST_CASE("suite specs describe consistent families") {
  const SuiteSpec a = suite_spec("shared4");
  CHECK(a.observation_width == 27);
  CHECK(a.action_count == 4);
  REQUIRE(a.task_count() == 4);
  const SuiteSpec b = suite_spec("distinct4");
  CHECK(b.observation_width == 28);
  CHECK(b.action_count == 4);
  REQUIRE(b.task_count() == 4);
  CHECK_THROWS_AS(suite_spec("nope"), ConfigError);
  CHECK_THROWS_AS(make_task_env("shared4", 4, 0), ConfigError);
  CHECK_THROWS_AS(make_task_env("distinct4", -1, 0), ConfigError);

  for (const SuiteSpec& s : {a, b}) {
    std::set<std::string> labels(s.task_labels.begin(), s.task_labels.end());
    CHECK(labels.size() == 4);
    REQUIRE(s.reward_scales.size() == 4);
    for (int t = 0; t < 4; ++t) {
      auto env = make_task_env(s.name, t, 123);
      CHECK(env->label() == s.task_labels[static_cast<size_t>(t)]);
      CHECK(env->observation_width() == s.observation_width);
      CHECK(env->action_count() == s.action_count);
      CHECK(known_reward_scales().at(env->label()) ==
            s.reward_scales[static_cast<size_t>(t)]);
      // Every observation has the suite width and unit-range entries.
      auto obs = env->reset();
      CHECK(static_cast<int>(obs.size()) == s.observation_width);
      CHECK(obs_in_unit_range(obs));
      Rng rng(t + 1);
      for (int i = 0; i < 100; ++i) {
        EnvStep out = env->step(rng.uniform_int(env->action_count()));
        CHECK(static_cast<int>(out.observation.size()) == s.observation_width);
        CHECK(obs_in_unit_range(out.observation));
        if (out.done) env->reset();
      }
    }
  }
}

TEST_CASE("published reward scale calibration values") {
  const auto& table = known_reward_scales();
  CHECK(table.at("ms_pacman") == 0.05);
  CHECK(table.at("boxing") == 1.0);
  CHECK(table.at("crazy_climber") == 0.001);
  CHECK(table.at("frostbite") == 0.2);
}

TEST_CASE("distinct4 raw reward magnitudes span at least two orders") {
  // Largest single-step payout over smallest nonzero one: 100 / 1.
  std::map<std::string, float> max_reward = {
      {"chain5", 1.0f}, {"bandit100", 100.0f}, {"keydoor5", 1.0f}, {"chain_rev6", 2.0f}};
  float lo = 1e9f;
  float hi = 0.0f;
  for (const auto& [label, r] : max_reward) {
    lo = std::min(lo, r);
    hi = std::max(hi, r);
  }
  CHECK(hi / lo >= 100.0f);
}

TEST_CASE("env misuse throws") {
  GridWorld env(0, 1);
  CHECK_THROWS_AS(env.step(0), RuntimeError);  // never reset
  env.reset();
  CHECK_THROWS_AS(env.step(4), RuntimeError);
  CHECK_THROWS_AS(env.step(-1), RuntimeError);
}

TEST_CASE("env save/load resumes bit-exactly for every task") {
  for (const std::string suite : {"shared4", "distinct4"}) {
    for (int task = 0; task < 4; ++task) {
      auto env = make_task_env(suite, task, 77);
      Rng warmup(5);
      env->reset();
      for (int i = 0; i < 7; ++i) {
        if (env->step(warmup.uniform_int(env->action_count())).done) env->reset();
      }
      BinWriter w1;
      env->save(w1);

      auto restored = make_task_env(suite, task, 77);
      BinReader r(w1.bytes());
      restored->load(r);
      CHECK(r.at_end());

      Rng sa(9), sb(9);
      for (int i = 0; i < 60; ++i) {
        const int action = sa.uniform_int(env->action_count());
        REQUIRE(action == sb.uniform_int(restored->action_count()));
        const EnvStep ea = env->step(action);
        const EnvStep eb = restored->step(action);
        REQUIRE(ea.observation == eb.observation);
        REQUIRE(ea.reward == eb.reward);
        REQUIRE(ea.done == eb.done);
        if (ea.done) {
          REQUIRE(env->reset() == restored->reset());
        }
      }
      BinWriter wa, wb;
      env->save(wa);
      restored->save(wb);
      REQUIRE(wa.bytes() == wb.bytes());
    }
  }
}

TEST_CASE("env load rejects a checkpoint from a different task") {
  auto a = make_task_env("distinct4", 0, 1);
  auto b = make_task_env("distinct4", 3, 1);
  a->reset();
  BinWriter w;
  a->save(w);
  BinReader r(w.bytes());
  CHECK_THROWS_AS(b->load(r), RuntimeError);
}
