#pragma once

#include <array>
#include <cstdint>
#include <map>
#include <memory>
#include <string>
#include <utility>
#include <vector>

#include "wmar/binio.hpp"
#include "wmar/rng.hpp"

namespace wmar {

struct EnvStep {
  std::vector<float> observation;
  float reward = 0.0f;  // raw task reward, unscaled
  bool done = false;    // terminal or truncated
};

// Episodic environment with private RNG so rollouts are reproducible from
// (constructor args, seed) and resumable through save/load. Stepping a
// finished episode is an error; callers must reset first.
class Env {
 public:
  virtual ~Env() = default;

  virtual int observation_width() const = 0;
  virtual int action_count() const = 0;
  virtual int max_episode_steps() const = 0;
  virtual std::string label() const = 0;

  virtual std::vector<float> reset() = 0;
  virtual EnvStep step(int action) = 0;

  virtual void save(BinWriter& w) const = 0;
  virtual void load(BinReader& r) = 0;
};

// 6x6 gridworld with a fixed wall layout shared by every palette task. The
// agent sees a 3x3 egocentric window with channels (wall-or-outside, goal,
// free), flattened cell-major to 27 floats, then remapped by the task
// palette: a channel permutation followed by a per-index affine map. All
// palettes are invertible, so the tasks differ only in surface statistics.
class GridWorld : public Env {
 public:
  static constexpr int kSize = 6;
  static constexpr int kWallCells = 4;
  static constexpr int kObsWidth = 27;
  static constexpr int kMaxEpisodeSteps = 32;

  struct Palette {
    std::array<int, 3> channel_perm = {0, 1, 2};
    std::array<float, kObsWidth> scale;
    std::array<float, kObsWidth> offset;
  };

  GridWorld(int palette_id, uint64_t seed);

  int observation_width() const override { return kObsWidth; }
  int action_count() const override { return 4; }
  int max_episode_steps() const override { return kMaxEpisodeSteps; }
  std::string label() const override;

  std::vector<float> reset() override;
  EnvStep step(int action) override;

  void save(BinWriter& w) const override;
  void load(BinReader& r) override;

  const std::vector<std::pair<int, int>>& walls() const { return walls_; }
  std::pair<int, int> agent() const { return {agent_r_, agent_c_}; }
  std::pair<int, int> goal() const { return {kSize - 1, kSize - 1}; }
  const Palette& palette() const { return palette_; }
  int steps_taken() const { return steps_; }

 private:
  bool is_wall(int r, int c) const;
  std::vector<float> observe() const;

  int palette_id_;
  Palette palette_;
  std::vector<std::pair<int, int>> walls_;
  Rng rng_;
  int agent_r_ = 0;
  int agent_c_ = 0;
  int steps_ = 0;
  bool done_ = true;
};

// Deterministic walk over positions 0..length-1 observed as a one-hot
// vector. One action moves toward the goal, one moves away (both clamped at
// the ends), the rest do nothing. Reaching the goal pays `reward` and ends
// the episode.
class ChainWalk : public Env {
 public:
  ChainWalk(int length, int start, int goal, float reward, int toward_action, int away_action,
            int max_steps, int pad_width, uint64_t seed, std::string label);

  int observation_width() const override { return pad_width_; }
  int action_count() const override { return 4; }
  int max_episode_steps() const override { return max_steps_; }
  std::string label() const override { return label_; }

  std::vector<float> reset() override;
  EnvStep step(int action) override;

  void save(BinWriter& w) const override;
  void load(BinReader& r) override;

  int position() const { return pos_; }
  int steps_taken() const { return steps_; }

 private:
  std::vector<float> observe() const;

  int length_, start_, goal_;
  float reward_;
  int toward_action_, away_action_, max_steps_, pad_width_;
  std::string label_;
  int pos_ = 0;
  int steps_ = 0;
  bool done_ = true;
};

// Contextual bandit: a binary context is drawn at reset and held for a
// fixed-length episode; every step pays `reward` iff the action equals the
// context. The observation is the one-hot context plus episode progress.
class ContextBandit : public Env {
 public:
  ContextBandit(int n_actions, int episode_len, float reward, int pad_width, uint64_t seed);

  int observation_width() const override { return pad_width_; }
  int action_count() const override { return n_actions_; }
  int max_episode_steps() const override { return episode_len_; }
  std::string label() const override { return "bandit100"; }

  std::vector<float> reset() override;
  EnvStep step(int action) override;

  void save(BinWriter& w) const override;
  void load(BinReader& r) override;

  int context() const { return context_; }
  int steps_taken() const { return steps_; }

 private:
  std::vector<float> observe() const;

  int n_actions_, episode_len_;
  float reward_;
  int pad_width_;
  Rng rng_;
  int context_ = 0;
  int steps_ = 0;
  bool done_ = true;
};

// 5x5 open grid where stepping onto the key cell picks up the key and the
// door pays out only when the key is held. Actions are a rotated version of
// the gridworld mapping and the whole observation is value-inverted, so the
// task shares no surface conventions with the other suite members.
class KeyDoor : public Env {
 public:
  static constexpr int kSize = 5;
  static constexpr int kObsWidth = 28;
  static constexpr int kMaxEpisodeSteps = 24;

  explicit KeyDoor(uint64_t seed);

  int observation_width() const override { return kObsWidth; }
  int action_count() const override { return 4; }
  int max_episode_steps() const override { return kMaxEpisodeSteps; }
  std::string label() const override { return "keydoor5"; }

  std::vector<float> reset() override;
  EnvStep step(int action) override;

  void save(BinWriter& w) const override;
  void load(BinReader& r) override;

  std::pair<int, int> agent() const { return {agent_r_, agent_c_}; }
  std::pair<int, int> key_cell() const { return {0, kSize - 1}; }
  std::pair<int, int> door_cell() const { return {kSize - 1, kSize - 1}; }
  bool has_key() const { return has_key_; }
  int steps_taken() const { return steps_; }

 private:
  std::vector<float> observe() const;

  Rng rng_;
  int agent_r_ = 0;
  int agent_c_ = 0;
  bool has_key_ = false;
  bool key_present_ = true;
  int steps_ = 0;
  bool done_ = true;
};

// Static description of a task suite: every member env reports the same
// observation width and action count so one model serves the whole suite.
struct SuiteSpec {
  std::string name;
  int observation_width = 0;
  int action_count = 0;
  std::vector<std::string> task_labels;
  std::vector<double> reward_scales;  // default per-task collection-time scales

  int task_count() const { return static_cast<int>(task_labels.size()); }
};

// Known suites: "shared4" (one gridworld under four palettes) and
// "distinct4" (four structurally different small tasks). Throws ConfigError
// on anything else.
SuiteSpec suite_spec(const std::string& name);
std::unique_ptr<Env> make_task_env(const std::string& suite, int task_index, uint64_t seed);

// Reference reward scales by task label, including the published Atari
// calibration values this scheme is modeled on.
const std::map<std::string, double>& known_reward_scales();

}  // namespace wmar
