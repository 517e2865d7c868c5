#include "wmar/replay.hpp"

#include <algorithm>

#include "wmar/errors.hpp"

namespace wmar {

namespace {

constexpr char kBufferMagic[8] = {'W', 'M', 'A', 'R', 'B', 'U', 'F', '1'};

struct KeyGreater {
  bool operator()(const Chunk& a, const Chunk& b) const { return a.reservoir_key > b.reservoir_key; }
};

}  // namespace

void save_step(BinWriter& w, const Step& s) {
  w.vec(s.observation);
  w.i32(s.action);
  w.f32(s.reward);
  w.u8(s.is_first ? 1 : 0);
}

Step load_step(BinReader& r) {
  Step s;
  s.observation = r.vec<float>();
  s.action = r.i32();
  s.reward = r.f32();
  s.is_first = r.u8() != 0;
  return s;
}

void save_chunk(BinWriter& w, const Chunk& c) {
  w.u64(c.steps.size());
  for (const Step& s : c.steps) save_step(w, s);
  w.f64(c.reservoir_key);
  w.i32(c.source_task);
}

Chunk load_chunk(BinReader& r) {
  Chunk c;
  const uint64_t n = r.u64();
  c.steps.reserve(n);
  for (uint64_t i = 0; i < n; ++i) c.steps.push_back(load_step(r));
  c.reservoir_key = r.f64();
  c.source_task = r.i32();
  return c;
}

// ---------------------------------------------------------------------------
// Splicer
// ---------------------------------------------------------------------------

Splicer::Splicer(int chunk_size, uint64_t key_seed)
    : chunk_size_(chunk_size), key_rng_(Rng::stream(key_seed, 0xc47d)) {
  if (chunk_size < 1) throw ConfigError("splice: chunk_size must be positive");
  carry_.reserve(static_cast<size_t>(chunk_size));
}

std::optional<Chunk> Splicer::push(const Step& step, int32_t source_task) {
  if (carry_.empty()) carry_task_ = source_task;
  carry_.push_back(step);
  if (static_cast<int>(carry_.size()) < chunk_size_) return std::nullopt;
  Chunk chunk;
  chunk.steps = std::move(carry_);
  carry_.clear();
  carry_.reserve(static_cast<size_t>(chunk_size_));
  chunk.reservoir_key = key_rng_.uniform01();
  chunk.source_task = carry_task_;
  return chunk;
}

void Splicer::save(BinWriter& w) const {
  w.i32(chunk_size_);
  w.u64(carry_.size());
  for (const Step& s : carry_) save_step(w, s);
  w.i32(carry_task_);
  for (uint64_t word : key_rng_.state()) w.u64(word);
}

void Splicer::load(BinReader& r) {
  const int chunk_size = r.i32();
  if (chunk_size != chunk_size_) throw RuntimeError("splice: checkpoint chunk_size mismatch");
  carry_.clear();
  const uint64_t n = r.u64();
  for (uint64_t i = 0; i < n; ++i) carry_.push_back(load_step(r));
  carry_task_ = r.i32();
  std::array<uint64_t, 4> state;
  for (auto& word : state) word = r.u64();
  key_rng_.set_state(state);
}

// ---------------------------------------------------------------------------
// FifoBuffer
// ---------------------------------------------------------------------------

FifoBuffer::FifoBuffer(int64_t capacity_steps) : capacity_steps_(capacity_steps) {
  if (capacity_steps < 0) throw ConfigError("fifo: capacity_steps must be nonnegative");
}

void FifoBuffer::insert(Chunk chunk) {
  stored_steps_ += static_cast<int64_t>(chunk.steps.size());
  chunks_.push_back(std::move(chunk));
  while (stored_steps_ > capacity_steps_ && !chunks_.empty()) {
    stored_steps_ -= static_cast<int64_t>(chunks_.front().steps.size());
    chunks_.pop_front();
  }
}

void FifoBuffer::save(BinWriter& w) const {
  w.i64(capacity_steps_);
  w.u64(chunks_.size());
  for (const Chunk& c : chunks_) save_chunk(w, c);
}

void FifoBuffer::load(BinReader& r) {
  capacity_steps_ = r.i64();
  chunks_.clear();
  stored_steps_ = 0;
  const uint64_t n = r.u64();
  for (uint64_t i = 0; i < n; ++i) {
    chunks_.push_back(load_chunk(r));
    stored_steps_ += static_cast<int64_t>(chunks_.back().steps.size());
  }
}

// ---------------------------------------------------------------------------
// ReservoirBuffer
// ---------------------------------------------------------------------------

ReservoirBuffer::ReservoirBuffer(int64_t capacity_chunks) : capacity_chunks_(capacity_chunks) {
  if (capacity_chunks < 0) throw ConfigError("reservoir: capacity_chunks must be nonnegative");
}

void ReservoirBuffer::insert(Chunk chunk) {
  if (capacity_chunks_ == 0) return;
  if (static_cast<int64_t>(heap_.size()) < capacity_chunks_) {
    stored_steps_ += static_cast<int64_t>(chunk.steps.size());
    heap_.push_back(std::move(chunk));
    std::push_heap(heap_.begin(), heap_.end(), KeyGreater{});
    return;
  }
  // Full: keep the incoming chunk only if its key beats the current minimum.
  if (chunk.reservoir_key <= heap_.front().reservoir_key) return;
  std::pop_heap(heap_.begin(), heap_.end(), KeyGreater{});
  stored_steps_ -= static_cast<int64_t>(heap_.back().steps.size());
  stored_steps_ += static_cast<int64_t>(chunk.steps.size());
  heap_.back() = std::move(chunk);
  std::push_heap(heap_.begin(), heap_.end(), KeyGreater{});
}

void ReservoirBuffer::save(BinWriter& w) const {
  w.i64(capacity_chunks_);
  w.u64(heap_.size());
  for (const Chunk& c : heap_) save_chunk(w, c);
}

void ReservoirBuffer::load(BinReader& r) {
  capacity_chunks_ = r.i64();
  heap_.clear();
  stored_steps_ = 0;
  const uint64_t n = r.u64();
  for (uint64_t i = 0; i < n; ++i) {
    heap_.push_back(load_chunk(r));
    stored_steps_ += static_cast<int64_t>(heap_.back().steps.size());
  }
  // The serialized order already satisfies the heap property since it was
  // written from a heap, but re-establish it defensively.
  std::make_heap(heap_.begin(), heap_.end(), KeyGreater{});
}

// ---------------------------------------------------------------------------
// AugmentedBuffer
// ---------------------------------------------------------------------------

AugmentedBuffer::AugmentedBuffer(int chunk_size, int64_t fifo_capacity_steps,
                                 int64_t ltdm_capacity_chunks, uint64_t key_seed)
    : splicer_(chunk_size, key_seed),
      fifo_(fifo_capacity_steps),
      ltdm_(ltdm_capacity_chunks) {}

int64_t AugmentedBuffer::memory_bound_steps() const {
  return fifo_.capacity_steps() + ltdm_.capacity_chunks() * splicer_.chunk_size();
}

void AugmentedBuffer::insert_step(const Step& step, int32_t source_task) {
  std::optional<Chunk> sealed = splicer_.push(step, source_task);
  if (!sealed) return;
  if (ltdm_enabled()) ltdm_.insert(*sealed);  // copy: both sub-buffers own their chunks
  fifo_.insert(std::move(*sealed));
  const int64_t stored = stored_steps();
  peak_stored_steps_ = std::max(peak_stored_steps_, stored);
  if (stored > memory_bound_steps())
    throw RuntimeError("replay: stored steps exceed configured memory bound");
}

bool AugmentedBuffer::can_sample(int batch_length) const {
  if (batch_length < 1 || batch_length > splicer_.chunk_size()) return false;
  return fifo_.chunk_count() > 0 || ltdm_.chunk_count() > 0;
}

std::vector<Step> AugmentedBuffer::cut_window(const Chunk& chunk, int start, int len) {
  return std::vector<Step>(chunk.steps.begin() + start, chunk.steps.begin() + start + len);
}

Minibatch AugmentedBuffer::sample_minibatch(int batch_size, int batch_length, Rng& rng) const {
  if (batch_size < 1) throw ConfigError("sample_minibatch: batch_size must be positive");
  if (batch_length < 1 || batch_length > splicer_.chunk_size())
    throw ConfigError("sample_minibatch: batch_length must be in [1, chunk_size]");

  Minibatch mb;
  // Uniform coin between sub-buffers; the long-term side defers to the FIFO
  // until it holds at least one chunk. The coin is always consumed so the
  // RNG stream does not depend on buffer fill state.
  const bool coin_fifo = rng.uniform_int(2) == 0;
  mb.from_fifo = coin_fifo || !ltdm_enabled() || ltdm_.chunk_count() == 0;
  if (mb.from_fifo && fifo_.chunk_count() == 0) mb.from_fifo = false;
  const size_t chunk_count = mb.from_fifo ? fifo_.chunk_count() : ltdm_.chunk_count();
  if (chunk_count == 0) throw RuntimeError("sample_minibatch: empty buffer");

  const int max_offset = splicer_.chunk_size() - batch_length;
  mb.windows.reserve(static_cast<size_t>(batch_size));
  mb.refs.reserve(static_cast<size_t>(batch_size));
  for (int b = 0; b < batch_size; ++b) {
    const size_t ci = static_cast<size_t>(rng.uniform_int64(static_cast<int64_t>(chunk_count)));
    const Chunk& chunk = mb.from_fifo ? fifo_.chunk(ci) : ltdm_.chunk(ci);
    const int offset = max_offset > 0 ? rng.uniform_int(max_offset + 1) : 0;
    mb.windows.push_back(cut_window(chunk, offset, batch_length));
    mb.refs.push_back({ci, offset});
  }
  return mb;
}

void AugmentedBuffer::save(BinWriter& w) const {
  w.magic(kBufferMagic);
  splicer_.save(w);
  fifo_.save(w);
  ltdm_.save(w);
  w.i64(peak_stored_steps_);
}

void AugmentedBuffer::load(BinReader& r) {
  r.expect_magic(kBufferMagic);
  splicer_.load(r);
  fifo_.load(r);
  ltdm_.load(r);
  peak_stored_steps_ = r.i64();
}

}  // namespace wmar
