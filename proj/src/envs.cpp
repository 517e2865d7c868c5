#include "wmar/envs.hpp"

#include <algorithm>
#include <queue>
#include <set>

#include "wmar/errors.hpp"

namespace wmar {

namespace {

// Layout and palette seeds are fixed constants: the wall layout and the
// observation remaps are part of the task definition, not of any run seed.
constexpr uint64_t kLayoutSeed = 0xA11CEull;
constexpr uint64_t kPaletteSeed = 0xC0FFEEull;
constexpr char kEnvMagic[9] = "WMARGENV";

const char* kPaletteLabels[4] = {"grid_plain", "grid_permuted", "grid_noise", "grid_inverted"};

void check_action(int action, int action_count) {
  if (action < 0 || action >= action_count) throw RuntimeError("env: action out of range");
}

void check_not_done(bool done) {
  if (done) throw RuntimeError("env: step called on a finished episode; reset first");
}

bool grid_connected(const std::vector<std::pair<int, int>>& walls, int size, int goal_r,
                    int goal_c) {
  std::set<std::pair<int, int>> wall_set(walls.begin(), walls.end());
  std::vector<std::vector<bool>> seen(static_cast<size_t>(size),
                                      std::vector<bool>(static_cast<size_t>(size), false));
  std::queue<std::pair<int, int>> q;
  q.push({goal_r, goal_c});
  seen[static_cast<size_t>(goal_r)][static_cast<size_t>(goal_c)] = true;
  const int dr[4] = {-1, 1, 0, 0};
  const int dc[4] = {0, 0, -1, 1};
  while (!q.empty()) {
    auto [r, c] = q.front();
    q.pop();
    for (int k = 0; k < 4; ++k) {
      const int nr = r + dr[k];
      const int nc = c + dc[k];
      if (nr < 0 || nr >= size || nc < 0 || nc >= size) continue;
      if (seen[static_cast<size_t>(nr)][static_cast<size_t>(nc)]) continue;
      if (wall_set.count({nr, nc})) continue;
      seen[static_cast<size_t>(nr)][static_cast<size_t>(nc)] = true;
      q.push({nr, nc});
    }
  }
  for (int r = 0; r < size; ++r) {
    for (int c = 0; c < size; ++c) {
      if (wall_set.count({r, c})) continue;
      if (!seen[static_cast<size_t>(r)][static_cast<size_t>(c)]) return false;
    }
  }
  return true;
}

// The one shared wall layout: four distinct interior cells that keep every
// free cell connected to the goal corner. Deterministic across runs.
std::vector<std::pair<int, int>> make_layout() {
  Rng rng(kLayoutSeed);
  for (int attempt = 0; attempt < 1000; ++attempt) {
    std::set<std::pair<int, int>> cells;
    while (static_cast<int>(cells.size()) < GridWorld::kWallCells) {
      const int r = 1 + rng.uniform_int(GridWorld::kSize - 2);
      const int c = 1 + rng.uniform_int(GridWorld::kSize - 2);
      cells.insert({r, c});
    }
    std::vector<std::pair<int, int>> walls(cells.begin(), cells.end());
    if (grid_connected(walls, GridWorld::kSize, GridWorld::kSize - 1, GridWorld::kSize - 1)) {
      return walls;
    }
  }
  throw RuntimeError("gridworld: no connected layout found");
}

GridWorld::Palette make_palette(int palette_id) {
  GridWorld::Palette p;
  p.scale.fill(1.0f);
  p.offset.fill(0.0f);
  switch (palette_id) {
    case 0:
      break;
    case 1:
      p.channel_perm = {2, 0, 1};
      break;
    case 2: {
      Rng rng = Rng::stream(kPaletteSeed, 2);
      p.scale.fill(0.7f);
      for (auto& o : p.offset) o = static_cast<float>(rng.uniform(0.0, 0.3));
      break;
    }
    case 3:
      p.scale.fill(-1.0f);
      p.offset.fill(1.0f);
      break;
    default:
      throw ConfigError("gridworld: palette_id must be in [0, 4)");
  }
  return p;
}

void save_rng(BinWriter& w, const Rng& rng) {
  for (const uint64_t word : rng.state()) w.u64(word);
}

void load_rng(BinReader& r, Rng& rng) {
  std::array<uint64_t, 4> st;
  for (auto& word : st) word = r.u64();
  rng.set_state(st);
}

void env_header(BinWriter& w, const char* tag) {
  w.magic(kEnvMagic);
  w.str(tag);
}

void expect_env_header(BinReader& r, const char* tag) {
  r.expect_magic(kEnvMagic);
  if (r.str() != tag) throw RuntimeError("env checkpoint: class mismatch");
}

void pad_to(std::vector<float>& obs, int width) {
  if (static_cast<int>(obs.size()) > width) throw RuntimeError("env: observation wider than pad");
  obs.resize(static_cast<size_t>(width), 0.0f);
}

}  // namespace

GridWorld::GridWorld(int palette_id, uint64_t seed)
    : palette_id_(palette_id), palette_(make_palette(palette_id)), walls_(make_layout()),
      rng_(seed) {}

std::string GridWorld::label() const { return kPaletteLabels[palette_id_]; }

bool GridWorld::is_wall(int r, int c) const {
  for (const auto& [wr, wc] : walls_) {
    if (wr == r && wc == c) return true;
  }
  return false;
}

std::vector<float> GridWorld::reset() {
  std::vector<std::pair<int, int>> starts;
  for (int r = 0; r < kSize; ++r) {
    for (int c = 0; c < kSize; ++c) {
      if (is_wall(r, c)) continue;
      if (r == kSize - 1 && c == kSize - 1) continue;
      starts.push_back({r, c});
    }
  }
  const auto& [r, c] = starts[static_cast<size_t>(rng_.uniform_int(static_cast<int>(starts.size())))];
  agent_r_ = r;
  agent_c_ = c;
  steps_ = 0;
  done_ = false;
  return observe();
}

EnvStep GridWorld::step(int action) {
  check_not_done(done_);
  check_action(action, 4);
  ++steps_;
  const int dr[4] = {-1, 1, 0, 0};
  const int dc[4] = {0, 0, -1, 1};
  const int nr = agent_r_ + dr[action];
  const int nc = agent_c_ + dc[action];
  if (nr >= 0 && nr < kSize && nc >= 0 && nc < kSize && !is_wall(nr, nc)) {
    agent_r_ = nr;
    agent_c_ = nc;
  }
  EnvStep out;
  if (agent_r_ == kSize - 1 && agent_c_ == kSize - 1) {
    out.reward = 1.0f;
    out.done = true;
  } else if (steps_ >= kMaxEpisodeSteps) {
    out.done = true;
  }
  done_ = out.done;
  out.observation = observe();
  return out;
}

std::vector<float> GridWorld::observe() const {
  std::array<float, kObsWidth> raw{};
  int cell = 0;
  for (int wr = -1; wr <= 1; ++wr) {
    for (int wc = -1; wc <= 1; ++wc, ++cell) {
      const int r = agent_r_ + wr;
      const int c = agent_c_ + wc;
      const bool inside = r >= 0 && r < kSize && c >= 0 && c < kSize;
      const bool wall = !inside || is_wall(r, c);
      const bool goal = inside && r == kSize - 1 && c == kSize - 1;
      raw[static_cast<size_t>(cell * 3 + 0)] = wall ? 1.0f : 0.0f;
      raw[static_cast<size_t>(cell * 3 + 1)] = goal ? 1.0f : 0.0f;
      raw[static_cast<size_t>(cell * 3 + 2)] = (inside && !wall && !goal) ? 1.0f : 0.0f;
    }
  }
  std::vector<float> out(kObsWidth);
  for (int i = 0; i < 9; ++i) {
    for (int ch = 0; ch < 3; ++ch) {
      const int idx = i * 3 + ch;
      const float permuted = raw[static_cast<size_t>(i * 3 + palette_.channel_perm[static_cast<size_t>(ch)])];
      out[static_cast<size_t>(idx)] =
          palette_.scale[static_cast<size_t>(idx)] * permuted + palette_.offset[static_cast<size_t>(idx)];
    }
  }
  return out;
}

void GridWorld::save(BinWriter& w) const {
  env_header(w, "gridworld");
  w.i32(palette_id_);
  for (const auto& [r, c] : walls_) {
    w.i32(r);
    w.i32(c);
  }
  w.i32(agent_r_);
  w.i32(agent_c_);
  w.i32(steps_);
  w.u8(done_ ? 1 : 0);
  save_rng(w, rng_);
}

void GridWorld::load(BinReader& r) {
  expect_env_header(r, "gridworld");
  if (r.i32() != palette_id_) throw RuntimeError("env checkpoint: palette mismatch");
  for (const auto& [wr, wc] : walls_) {
    if (r.i32() != wr || r.i32() != wc) throw RuntimeError("env checkpoint: layout mismatch");
  }
  agent_r_ = r.i32();
  agent_c_ = r.i32();
  steps_ = r.i32();
  done_ = r.u8() != 0;
  load_rng(r, rng_);
}

ChainWalk::ChainWalk(int length, int start, int goal, float reward, int toward_action,
                     int away_action, int max_steps, int pad_width, uint64_t seed,
                     std::string label)
    : length_(length), start_(start), goal_(goal), reward_(reward),
      toward_action_(toward_action), away_action_(away_action), max_steps_(max_steps),
      pad_width_(pad_width), label_(std::move(label)) {
  (void)seed;  // fully deterministic task
  if (length_ < 2 || start_ < 0 || start_ >= length_ || goal_ < 0 || goal_ >= length_ ||
      start_ == goal_) {
    throw ConfigError("chainwalk: invalid geometry");
  }
  if (pad_width_ < length_) throw ConfigError("chainwalk: pad narrower than positions");
}

std::vector<float> ChainWalk::reset() {
  pos_ = start_;
  steps_ = 0;
  done_ = false;
  return observe();
}

EnvStep ChainWalk::step(int action) {
  check_not_done(done_);
  check_action(action, action_count());
  ++steps_;
  const int dir = goal_ > start_ ? 1 : -1;
  if (action == toward_action_) {
    pos_ = std::clamp(pos_ + dir, 0, length_ - 1);
  } else if (action == away_action_) {
    pos_ = std::clamp(pos_ - dir, 0, length_ - 1);
  }
  EnvStep out;
  if (pos_ == goal_) {
    out.reward = reward_;
    out.done = true;
  } else if (steps_ >= max_steps_) {
    out.done = true;
  }
  done_ = out.done;
  out.observation = observe();
  return out;
}

std::vector<float> ChainWalk::observe() const {
  std::vector<float> obs(static_cast<size_t>(length_), 0.0f);
  obs[static_cast<size_t>(pos_)] = 1.0f;
  pad_to(obs, pad_width_);
  return obs;
}

void ChainWalk::save(BinWriter& w) const {
  env_header(w, "chainwalk");
  w.str(label_);
  w.i32(length_);
  w.i32(pos_);
  w.i32(steps_);
  w.u8(done_ ? 1 : 0);
}

void ChainWalk::load(BinReader& r) {
  expect_env_header(r, "chainwalk");
  if (r.str() != label_ || r.i32() != length_) throw RuntimeError("env checkpoint: task mismatch");
  pos_ = r.i32();
  steps_ = r.i32();
  done_ = r.u8() != 0;
}

ContextBandit::ContextBandit(int n_actions, int episode_len, float reward, int pad_width,
                             uint64_t seed)
    : n_actions_(n_actions), episode_len_(episode_len), reward_(reward), pad_width_(pad_width),
      rng_(seed) {
  if (n_actions_ < 2) throw ConfigError("bandit: needs at least two actions");
  if (episode_len_ < 1) throw ConfigError("bandit: episode_len must be positive");
  if (pad_width_ < 3) throw ConfigError("bandit: pad narrower than observation");
}

std::vector<float> ContextBandit::reset() {
  context_ = rng_.uniform_int(2);
  steps_ = 0;
  done_ = false;
  return observe();
}

EnvStep ContextBandit::step(int action) {
  check_not_done(done_);
  check_action(action, n_actions_);
  ++steps_;
  EnvStep out;
  out.reward = action == context_ ? reward_ : 0.0f;
  out.done = steps_ >= episode_len_;
  done_ = out.done;
  out.observation = observe();
  return out;
}

std::vector<float> ContextBandit::observe() const {
  std::vector<float> obs(3, 0.0f);
  obs[static_cast<size_t>(context_)] = 1.0f;
  obs[2] = static_cast<float>(steps_) / static_cast<float>(episode_len_);
  pad_to(obs, pad_width_);
  return obs;
}

void ContextBandit::save(BinWriter& w) const {
  env_header(w, "bandit");
  w.i32(n_actions_);
  w.i32(episode_len_);
  w.f32(reward_);
  w.i32(context_);
  w.i32(steps_);
  w.u8(done_ ? 1 : 0);
  save_rng(w, rng_);
}

void ContextBandit::load(BinReader& r) {
  expect_env_header(r, "bandit");
  if (r.i32() != n_actions_ || r.i32() != episode_len_ || r.f32() != reward_) {
    throw RuntimeError("env checkpoint: task mismatch");
  }
  context_ = r.i32();
  steps_ = r.i32();
  done_ = r.u8() != 0;
  load_rng(r, rng_);
}

KeyDoor::KeyDoor(uint64_t seed) : rng_(seed) {}

std::vector<float> KeyDoor::reset() {
  // Uniform over cells that are neither the key nor the door.
  const int pick = rng_.uniform_int(kSize * kSize - 2);
  int idx = 0;
  int assigned = -1;
  for (int cell = 0; cell < kSize * kSize; ++cell) {
    const int r = cell / kSize;
    const int c = cell % kSize;
    if (std::pair{r, c} == key_cell() || std::pair{r, c} == door_cell()) continue;
    if (idx == pick) {
      assigned = cell;
      break;
    }
    ++idx;
  }
  agent_r_ = assigned / kSize;
  agent_c_ = assigned % kSize;
  has_key_ = false;
  key_present_ = true;
  steps_ = 0;
  done_ = false;
  return observe();
}

EnvStep KeyDoor::step(int action) {
  check_not_done(done_);
  check_action(action, 4);
  ++steps_;
  // Rotated action mapping: right, up, left, down.
  const int dr[4] = {0, -1, 0, 1};
  const int dc[4] = {1, 0, -1, 0};
  agent_r_ = std::clamp(agent_r_ + dr[action], 0, kSize - 1);
  agent_c_ = std::clamp(agent_c_ + dc[action], 0, kSize - 1);
  if (key_present_ && std::pair{agent_r_, agent_c_} == key_cell()) {
    has_key_ = true;
    key_present_ = false;
  }
  EnvStep out;
  if (has_key_ && std::pair{agent_r_, agent_c_} == door_cell()) {
    out.reward = 1.0f;
    out.done = true;
  } else if (steps_ >= kMaxEpisodeSteps) {
    out.done = true;
  }
  done_ = out.done;
  out.observation = observe();
  return out;
}

std::vector<float> KeyDoor::observe() const {
  std::vector<float> obs(kObsWidth, 0.0f);
  obs[static_cast<size_t>(agent_r_ * kSize + agent_c_)] = 1.0f;
  obs[25] = has_key_ ? 1.0f : 0.0f;
  obs[26] = key_present_ ? 1.0f : 0.0f;
  obs[27] = static_cast<float>(steps_) / static_cast<float>(kMaxEpisodeSteps);
  for (auto& v : obs) v = 1.0f - v;
  return obs;
}

void KeyDoor::save(BinWriter& w) const {
  env_header(w, "keydoor");
  w.i32(agent_r_);
  w.i32(agent_c_);
  w.u8(has_key_ ? 1 : 0);
  w.u8(key_present_ ? 1 : 0);
  w.i32(steps_);
  w.u8(done_ ? 1 : 0);
  save_rng(w, rng_);
}

void KeyDoor::load(BinReader& r) {
  expect_env_header(r, "keydoor");
  agent_r_ = r.i32();
  agent_c_ = r.i32();
  has_key_ = r.u8() != 0;
  key_present_ = r.u8() != 0;
  steps_ = r.i32();
  done_ = r.u8() != 0;
  load_rng(r, rng_);
}

SuiteSpec suite_spec(const std::string& name) {
  SuiteSpec s;
  s.name = name;
  if (name == "shared4") {
    s.observation_width = GridWorld::kObsWidth;
    s.action_count = 4;
    for (int p = 0; p < 4; ++p) s.task_labels.push_back(kPaletteLabels[p]);
    s.reward_scales = {1.0, 1.0, 1.0, 1.0};
    return s;
  }
  if (name == "distinct4") {
    s.observation_width = KeyDoor::kObsWidth;
    s.action_count = 4;
    s.task_labels = {"chain5", "bandit100", "keydoor5", "chain_rev6"};
    s.reward_scales = {1.0, 0.001, 1.0, 1.0};
    return s;
  }
  throw ConfigError("unknown suite: " + name);
}

std::unique_ptr<Env> make_task_env(const std::string& suite, int task_index, uint64_t seed) {
  if (suite == "shared4") {
    if (task_index < 0 || task_index >= 4) throw ConfigError("shared4: task index out of range");
    return std::make_unique<GridWorld>(task_index, seed);
  }
  if (suite == "distinct4") {
    switch (task_index) {
      case 0:
        return std::make_unique<ChainWalk>(6, 0, 5, 1.0f, 1, 0, 16, 28, seed, "chain5");
      case 1:
        return std::make_unique<ContextBandit>(4, 8, 100.0f, 28, seed);
      case 2:
        return std::make_unique<KeyDoor>(seed);
      case 3:
        return std::make_unique<ChainWalk>(7, 6, 0, 2.0f, 3, 2, 16, 28, seed, "chain_rev6");
      default:
        throw ConfigError("distinct4: task index out of range");
    }
  }
  throw ConfigError("unknown suite: " + suite);
}

const std::map<std::string, double>& known_reward_scales() {
  static const std::map<std::string, double> table = {
      // Published calibration values the per-task scaling follows.
      {"ms_pacman", 0.05},
      {"boxing", 1.0},
      {"crazy_climber", 0.001},
      {"frostbite", 0.2},
      // This repo's task suites.
      {"grid_plain", 1.0},
      {"grid_permuted", 1.0},
      {"grid_noise", 1.0},
      {"grid_inverted", 1.0},
      {"chain5", 1.0},
      {"bandit100", 0.001},
      {"keydoor5", 1.0},
      {"chain_rev6", 1.0},
  };
  return table;
}

}  // namespace wmar
