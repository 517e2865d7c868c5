#pragma once

#include <bit>
#include <cstdint>
#include <cstring>
#include <string>
#include <vector>

#include "wmar/errors.hpp"
#include "wmar/mat.hpp"

namespace wmar {

// Append-only little-endian byte sink for checkpoints. Floats are written as
// raw IEEE bytes so a save/load round trip is bit-exact.
class BinWriter {
 public:
  void u8(uint8_t v) { buf_.push_back(v); }
  void u32(uint32_t v) { raw(&v, sizeof v); }
  void u64(uint64_t v) { raw(&v, sizeof v); }
  void i32(int32_t v) { raw(&v, sizeof v); }
  void i64(int64_t v) { raw(&v, sizeof v); }
  void f32(float v) { raw(&v, sizeof v); }
  void f64(double v) { raw(&v, sizeof v); }

  void str(const std::string& s) {
    u64(s.size());
    raw(s.data(), s.size());
  }

  void magic(const char m[8]) { raw(m, 8); }

  template <typename T>
  void mat(const Mat<T>& m) {
    i32(m.rows());
    i32(m.cols());
    raw(m.data(), m.size() * sizeof(T));
  }

  template <typename T>
  void vec(const std::vector<T>& v) {
    static_assert(std::is_trivially_copyable_v<T>);
    u64(v.size());
    raw(v.data(), v.size() * sizeof(T));
  }

  void raw(const void* p, size_t n) {
    const auto* b = static_cast<const uint8_t*>(p);
    buf_.insert(buf_.end(), b, b + n);
  }

  const std::vector<uint8_t>& bytes() const { return buf_; }

 private:
  std::vector<uint8_t> buf_;
};

class BinReader {
 public:
  BinReader(const uint8_t* data, size_t size) : p_(data), end_(data + size) {}
  explicit BinReader(const std::vector<uint8_t>& b) : BinReader(b.data(), b.size()) {}

  uint8_t u8() { return take<uint8_t>(); }
  uint32_t u32() { return take<uint32_t>(); }
  uint64_t u64() { return take<uint64_t>(); }
  int32_t i32() { return take<int32_t>(); }
  int64_t i64() { return take<int64_t>(); }
  float f32() { return take<float>(); }
  double f64() { return take<double>(); }

  std::string str() {
    const uint64_t n = u64();
    need(n);
    std::string s(reinterpret_cast<const char*>(p_), n);
    p_ += n;
    return s;
  }

  void expect_magic(const char m[8]) {
    need(8);
    if (std::memcmp(p_, m, 8) != 0) throw RuntimeError("checkpoint: bad magic");
    p_ += 8;
  }

  template <typename T>
  Mat<T> mat() {
    const int rows = i32();
    const int cols = i32();
    if (rows < 0 || cols < 0) throw RuntimeError("checkpoint: negative matrix shape");
    Mat<T> m(rows, cols);
    raw(m.data(), m.size() * sizeof(T));
    return m;
  }

  template <typename T>
  std::vector<T> vec() {
    static_assert(std::is_trivially_copyable_v<T>);
    const uint64_t n = u64();
    std::vector<T> v(n);
    raw(v.data(), n * sizeof(T));
    return v;
  }

  void raw(void* out, size_t n) {
    need(n);
    std::memcpy(out, p_, n);
    p_ += n;
  }

  bool at_end() const { return p_ == end_; }

 private:
  template <typename T>
  T take() {
    T v;
    raw(&v, sizeof v);
    return v;
  }

  void need(size_t n) {
    if (static_cast<size_t>(end_ - p_) < n) throw RuntimeError("checkpoint: truncated data");
  }

  const uint8_t* p_;
  const uint8_t* end_;
};

}  // namespace wmar
