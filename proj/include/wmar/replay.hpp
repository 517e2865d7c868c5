#pragma once

#include <cstdint>
#include <deque>
#include <optional>
#include <vector>

#include "wmar/binio.hpp"
#include "wmar/rng.hpp"

namespace wmar {

// One environment transition as stored in replay. `action` is the action
// that led into `observation`; `reward` arrived together with it (already
// task-scaled at collection time). `is_first` marks episode starts, where
// action and reward are zero.
struct Step {
  std::vector<float> observation;
  int32_t action = 0;
  float reward = 0.0f;
  bool is_first = false;

  bool operator==(const Step& o) const {
    return observation == o.observation && action == o.action && reward == o.reward &&
           is_first == o.is_first;
  }
};

// Fixed-length run of consecutive steps. The reservoir key is drawn once
// when the chunk is sealed and never changes; source_task is metadata only.
struct Chunk {
  std::vector<Step> steps;
  double reservoir_key = 0.0;
  int32_t source_task = 0;
};

void save_step(BinWriter& w, const Step& s);
Step load_step(BinReader& r);
void save_chunk(BinWriter& w, const Chunk& c);
Chunk load_chunk(BinReader& r);

// Lays episodes end to end and seals a chunk every chunk_size steps; the
// remainder stays in the carry until more steps arrive. Keys for sealed
// chunks come from an internal stream so that chunking is reproducible.
class Splicer {
 public:
  Splicer(int chunk_size, uint64_t key_seed);

  // Feed one step; returns the sealed chunk when the carry fills up.
  std::optional<Chunk> push(const Step& step, int32_t source_task);

  int chunk_size() const { return chunk_size_; }
  const std::vector<Step>& carry() const { return carry_; }

  void save(BinWriter& w) const;
  void load(BinReader& r);

 private:
  int chunk_size_;
  std::vector<Step> carry_;
  int32_t carry_task_ = 0;
  Rng key_rng_;
};

// Drops whole oldest chunks once the stored step count would exceed
// capacity_steps. Capacity is in steps, so it holds at most
// floor(capacity_steps / chunk_size) chunks.
class FifoBuffer {
 public:
  explicit FifoBuffer(int64_t capacity_steps);

  void insert(Chunk chunk);

  int64_t capacity_steps() const { return capacity_steps_; }
  int64_t stored_steps() const { return stored_steps_; }
  size_t chunk_count() const { return chunks_.size(); }
  const Chunk& chunk(size_t i) const { return chunks_[i]; }

  void save(BinWriter& w) const;
  void load(BinReader& r);

 private:
  int64_t capacity_steps_;
  int64_t stored_steps_ = 0;
  std::deque<Chunk> chunks_;
};

// Distribution-matching long-term buffer: keeps the capacity_chunks chunks
// with the highest reservoir keys among everything ever inserted, which
// makes the retained set an exchangeable uniform subsample of the stream.
class ReservoirBuffer {
 public:
  explicit ReservoirBuffer(int64_t capacity_chunks);

  void insert(Chunk chunk);

  int64_t capacity_chunks() const { return capacity_chunks_; }
  int64_t stored_steps() const { return stored_steps_; }
  size_t chunk_count() const { return heap_.size(); }
  const Chunk& chunk(size_t i) const { return heap_[i]; }

  void save(BinWriter& w) const;
  void load(BinReader& r);

 private:
  int64_t capacity_chunks_;
  int64_t stored_steps_ = 0;
  std::vector<Chunk> heap_;  // min-heap on reservoir_key
};

struct Minibatch {
  // windows[b] is a contiguous run of batch_length steps from one chunk;
  // refs[b] records which chunk and offset it was cut from.
  struct WindowRef {
    size_t chunk_index = 0;
    int offset = 0;
  };
  std::vector<std::vector<Step>> windows;
  std::vector<WindowRef> refs;
  bool from_fifo = true;
};

// FIFO + long-term reservoir behind one interface. Every sealed chunk goes
// to the FIFO and, when the long-term buffer is enabled, a copy goes there
// too. Total stored steps never exceed the configured bound; insert checks
// this after every chunk.
class AugmentedBuffer {
 public:
  AugmentedBuffer(int chunk_size, int64_t fifo_capacity_steps, int64_t ltdm_capacity_chunks,
                  uint64_t key_seed);

  void insert_step(const Step& step, int32_t source_task);

  // Picks one sub-buffer uniformly, then batch_size windows uniform over
  // (chunk, valid start offset). Falls back to the FIFO while the long-term
  // buffer is empty or disabled.
  Minibatch sample_minibatch(int batch_size, int batch_length, Rng& rng) const;

  bool can_sample(int batch_length) const;

  const FifoBuffer& fifo() const { return fifo_; }
  const ReservoirBuffer& ltdm() const { return ltdm_; }
  const Splicer& splicer() const { return splicer_; }
  bool ltdm_enabled() const { return ltdm_.capacity_chunks() > 0; }
  int chunk_size() const { return splicer_.chunk_size(); }

  // Steps resident in both sub-buffers (carry excluded: it is bounded by one
  // chunk and not yet sampleable).
  int64_t stored_steps() const { return fifo_.stored_steps() + ltdm_.stored_steps(); }
  int64_t memory_bound_steps() const;
  int64_t peak_stored_steps() const { return peak_stored_steps_; }

  void save(BinWriter& w) const;
  void load(BinReader& r);

 private:
  static std::vector<Step> cut_window(const Chunk& chunk, int start, int len);

  Splicer splicer_;
  FifoBuffer fifo_;
  ReservoirBuffer ltdm_;
  int64_t peak_stored_steps_ = 0;
};

}  // namespace wmar
