#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <functional>
#include <numeric>
#include <span>
#include <sstream>
#include <string>
#include <vector>

#include "faultlens/error.hpp"

namespace faultlens {

using Shape = std::vector<std::size_t>;

inline std::size_t shape_size(const Shape& shape) {
  return std::accumulate(shape.begin(), shape.end(), std::size_t{1},
                         std::multiplies<>());
}

inline std::string shape_string(const Shape& shape) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) os << 'x';
    os << shape[i];
  }
  os << ']';
  return os.str();
}

/// Dense row-major array of doubles. The invariant
/// `shape_size(shape()) == data().size()` holds for every constructed value.
class Tensor {
 public:
  Tensor() : shape_{0} {}

  explicit Tensor(Shape shape, double fill = 0.0)
      : shape_(std::move(shape)), data_(shape_size(shape_), fill) {
    check_dims();
  }

  Tensor(Shape shape, std::vector<double> data)
      : shape_(std::move(shape)), data_(std::move(data)) {
    check_dims();
    if (shape_size(shape_) != data_.size()) {
      throw ShapeError("tensor data length " + std::to_string(data_.size()) +
                       " does not match shape " + shape_string(shape_));
    }
  }

  static Tensor scalar(double v) { return Tensor({1}, std::vector{v}); }

  static Tensor matrix(std::size_t rows, std::size_t cols,
                       std::vector<double> data) {
    return Tensor({rows, cols}, std::move(data));
  }

  static Tensor from_rows(const std::vector<std::vector<double>>& rows) {
    if (rows.empty()) throw ShapeError("from_rows: no rows");
    const std::size_t cols = rows.front().size();
    std::vector<double> data;
    data.reserve(rows.size() * cols);
    for (const auto& r : rows) {
      if (r.size() != cols) throw ShapeError("from_rows: ragged rows");
      data.insert(data.end(), r.begin(), r.end());
    }
    return Tensor({rows.size(), cols}, std::move(data));
  }

  [[nodiscard]] const Shape& shape() const noexcept { return shape_; }
  [[nodiscard]] std::size_t rank() const noexcept { return shape_.size(); }
  [[nodiscard]] std::size_t size() const noexcept { return data_.size(); }
  [[nodiscard]] std::size_t dim(std::size_t axis) const {
    return shape_.at(axis);
  }

  /// Leading dimension for a matrix view; rank-1 tensors are one row.
  [[nodiscard]] std::size_t rows() const {
    return rank() == 1 ? 1 : shape_.front();
  }
  [[nodiscard]] std::size_t cols() const { return shape_.back(); }

  [[nodiscard]] std::span<const double> data() const noexcept { return data_; }
  [[nodiscard]] std::span<double> data() noexcept { return data_; }
  [[nodiscard]] const std::vector<double>& values() const noexcept {
    return data_;
  }

  double& operator[](std::size_t i) { return data_[i]; }
  double operator[](std::size_t i) const { return data_[i]; }

  double& at(std::size_t r, std::size_t c) { return data_[r * cols() + c]; }
  [[nodiscard]] double at(std::size_t r, std::size_t c) const {
    return data_[r * cols() + c];
  }

  [[nodiscard]] std::span<const double> row(std::size_t r) const {
    return std::span<const double>(data_).subspan(r * cols(), cols());
  }
  [[nodiscard]] std::span<double> row(std::size_t r) {
    return std::span<double>(data_).subspan(r * cols(), cols());
  }

  [[nodiscard]] Tensor reshaped(Shape shape) const {
    return Tensor(std::move(shape), data_);
  }

  void reshape(Shape shape) {
    if (shape_size(shape) != data_.size()) {
      throw ShapeError("cannot reshape " + shape_string(shape_) + " to " +
                       shape_string(shape));
    }
    shape_ = std::move(shape);
    check_dims();
  }

  [[nodiscard]] bool all_finite() const {
    return std::all_of(data_.begin(), data_.end(),
                       [](double v) { return std::isfinite(v); });
  }

  [[nodiscard]] double sum() const {
    double s = 0.0;
    for (double v : data_) s += v;
    return s;
  }

  void fill(double v) { std::fill(data_.begin(), data_.end(), v); }

  friend bool operator==(const Tensor& a, const Tensor& b) {
    return a.shape_ == b.shape_ && a.data_ == b.data_;
  }

 private:
  void check_dims() const {
    if (shape_.empty()) throw ShapeError("tensor shape must be non-empty");
    for (std::size_t d : shape_) {
      if (d == 0) {
        throw ShapeError("tensor dimensions must be positive, got " +
                         shape_string(shape_));
      }
    }
  }

  Shape shape_;
  std::vector<double> data_;
};

// Matrix kernels on raw row-major spans. Loop order keeps the innermost
// access contiguous so the compiler can vectorize it.

/// out[n x m] = a[n x k] * b[k x m]
inline void gemm_nn(std::span<const double> a, std::span<const double> b,
                    std::span<double> out, std::size_t n, std::size_t k,
                    std::size_t m) {
  std::fill(out.begin(), out.end(), 0.0);
  for (std::size_t i = 0; i < n; ++i) {
    double* orow = out.data() + i * m;
    const double* arow = a.data() + i * k;
    for (std::size_t p = 0; p < k; ++p) {
      const double av = arow[p];
      if (av == 0.0) continue;
      const double* brow = b.data() + p * m;
      for (std::size_t j = 0; j < m; ++j) orow[j] += av * brow[j];
    }
  }
}

/// out[n x k] += g[n x m] * b[k x m]^T
inline void gemm_nt_acc(std::span<const double> g, std::span<const double> b,
                        std::span<double> out, std::size_t n, std::size_t k,
                        std::size_t m) {
  for (std::size_t i = 0; i < n; ++i) {
    const double* grow = g.data() + i * m;
    double* orow = out.data() + i * k;
    for (std::size_t p = 0; p < k; ++p) {
      const double* brow = b.data() + p * m;
      double s = 0.0;
      for (std::size_t j = 0; j < m; ++j) s += grow[j] * brow[j];
      orow[p] += s;
    }
  }
}

/// out[k x m] += a[n x k]^T * g[n x m]
inline void gemm_tn_acc(std::span<const double> a, std::span<const double> g,
                        std::span<double> out, std::size_t n, std::size_t k,
                        std::size_t m) {
  for (std::size_t i = 0; i < n; ++i) {
    const double* arow = a.data() + i * k;
    const double* grow = g.data() + i * m;
    for (std::size_t p = 0; p < k; ++p) {
      const double av = arow[p];
      if (av == 0.0) continue;
      double* orow = out.data() + p * m;
      for (std::size_t j = 0; j < m; ++j) orow[j] += av * grow[j];
    }
  }
}

}  // namespace faultlens
