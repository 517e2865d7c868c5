#pragma once

#include <Eigen/Dense>
#include <cstring>
#include <vector>

#include "wmar/errors.hpp"
#include "wmar/rng.hpp"

namespace wmar {

// Dense row-major matrix over float or double. The autodiff tape and all
// model code run on these; Eigen maps are used for the matrix products.
template <typename T>
class Mat {
 public:
  using EigenMat = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
  using Map = Eigen::Map<EigenMat>;
  using CMap = Eigen::Map<const EigenMat>;

  Mat() = default;
  Mat(int rows, int cols) : rows_(rows), cols_(cols), v_(static_cast<size_t>(rows) * cols) {}

  static Mat zeros(int rows, int cols) { return Mat(rows, cols); }

  static Mat full(int rows, int cols, T value) {
    Mat m(rows, cols);
    std::fill(m.v_.begin(), m.v_.end(), value);
    return m;
  }

  static Mat from(int rows, int cols, std::initializer_list<T> values) {
    Mat m(rows, cols);
    if (static_cast<size_t>(rows) * cols != values.size())
      throw RuntimeError("Mat::from: size mismatch");
    std::copy(values.begin(), values.end(), m.v_.begin());
    return m;
  }

  int rows() const { return rows_; }
  int cols() const { return cols_; }
  size_t size() const { return v_.size(); }
  bool empty() const { return v_.empty(); }

  T& operator()(int r, int c) { return v_[static_cast<size_t>(r) * cols_ + c]; }
  T operator()(int r, int c) const { return v_[static_cast<size_t>(r) * cols_ + c]; }
  T* data() { return v_.data(); }
  const T* data() const { return v_.data(); }
  T* row(int r) { return v_.data() + static_cast<size_t>(r) * cols_; }
  const T* row(int r) const { return v_.data() + static_cast<size_t>(r) * cols_; }

  Map map() { return Map(v_.data(), rows_, cols_); }
  CMap map() const { return CMap(v_.data(), rows_, cols_); }

  void set_zero() { std::fill(v_.begin(), v_.end(), T(0)); }

  bool same_shape(const Mat& o) const { return rows_ == o.rows_ && cols_ == o.cols_; }

  bool all_finite() const {
    for (const T x : v_)
      if (!std::isfinite(static_cast<double>(x))) return false;
    return true;
  }

  template <typename U>
  Mat<U> cast() const {
    Mat<U> out(rows_, cols_);
    for (size_t i = 0; i < v_.size(); ++i) out.data()[i] = static_cast<U>(v_[i]);
    return out;
  }

 private:
  int rows_ = 0;
  int cols_ = 0;
  std::vector<T> v_;
};

// Glorot-normal initialization for weight matrices.
template <typename T>
Mat<T> glorot_normal(int rows, int cols, Rng& rng) {
  Mat<T> m(rows, cols);
  const double scale = std::sqrt(2.0 / (rows + cols));
  for (size_t i = 0; i < m.size(); ++i)
    m.data()[i] = static_cast<T>(rng.normal() * scale);
  return m;
}

}  // namespace wmar
