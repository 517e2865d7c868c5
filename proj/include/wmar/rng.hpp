#pragma once

#include <array>
#include <cmath>
#include <cstdint>

#include "wmar/errors.hpp"

namespace wmar {

// SplitMix64 step, used for seeding and stream derivation.
inline uint64_t splitmix64(uint64_t& state) {
  uint64_t z = (state += 0x9e3779b97f4a7c15ULL);
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
  return z ^ (z >> 31);
}

// xoshiro256++ generator. Chosen over std::mt19937_64 because the whole
// state is four words, which keeps checkpoints small and bit-exact, and all
// derived distributions below are implemented by hand so results do not
// depend on the standard library vendor.
class Rng {
 public:
  Rng() : Rng(0x9fb21c651e98df25ULL) {}

  explicit Rng(uint64_t seed) {
    uint64_t sm = seed;
    for (auto& w : s_) w = splitmix64(sm);
  }

  // Independent generator for a named substream of `seed`.
  static Rng stream(uint64_t seed, uint64_t stream_id) {
    uint64_t sm = seed;
    uint64_t a = splitmix64(sm);
    sm = stream_id * 0xd6e8feb86659fd93ULL + 0x2545f4914f6cdd1dULL;
    uint64_t b = splitmix64(sm);
    return Rng(a ^ (b + 0x9e3779b97f4a7c15ULL));
  }

  uint64_t next_u64() {
    const uint64_t result = rotl(s_[0] + s_[3], 23) + s_[0];
    const uint64_t t = s_[1] << 17;
    s_[2] ^= s_[0];
    s_[3] ^= s_[1];
    s_[1] ^= s_[2];
    s_[0] ^= s_[3];
    s_[2] ^= t;
    s_[3] = rotl(s_[3], 45);
    return result;
  }

  // Uniform double in [0, 1) with 53 random bits.
  double uniform01() { return static_cast<double>(next_u64() >> 11) * 0x1.0p-53; }

  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform01(); }

  // Uniform integer in [0, n). n must be positive.
  int uniform_int(int n) {
    if (n <= 0) throw RuntimeError("Rng::uniform_int: n must be positive");
    return static_cast<int>(next_u64() % static_cast<uint64_t>(n));
  }

  int64_t uniform_int64(int64_t n) {
    if (n <= 0) throw RuntimeError("Rng::uniform_int64: n must be positive");
    return static_cast<int64_t>(next_u64() % static_cast<uint64_t>(n));
  }

  // Standard normal via Box-Muller. Computes a fresh pair every call so the
  // generator state is the only thing a checkpoint has to capture.
  double normal() {
    double u1 = uniform01();
    while (u1 <= 0.0) u1 = uniform01();
    const double u2 = uniform01();
    return std::sqrt(-2.0 * std::log(u1)) * std::cos(6.283185307179586 * u2);
  }

  // Inverse-CDF draw from an unnormalized nonnegative weight vector.
  template <typename T>
  int categorical(const T* weights, int n) {
    double total = 0.0;
    for (int i = 0; i < n; ++i) total += static_cast<double>(weights[i]);
    if (!(total > 0.0)) throw NumericsError("Rng::categorical: weights sum to zero");
    double u = uniform01() * total;
    for (int i = 0; i < n; ++i) {
      u -= static_cast<double>(weights[i]);
      if (u < 0.0) return i;
    }
    return n - 1;
  }

  std::array<uint64_t, 4> state() const { return s_; }
  void set_state(const std::array<uint64_t, 4>& s) { s_ = s; }

 private:
  static uint64_t rotl(uint64_t x, int k) { return (x << k) | (x >> (64 - k)); }
  std::array<uint64_t, 4> s_{};
};

}  // namespace wmar
