#pragma once

#include <cassert>
#include <cstddef>
#include <cstdlib>
#include <new>
#include <utility>
#include <vector>

namespace flow4d {

// Row-major 2-D double array, 64-byte aligned for the SIMD kernels.
// 1-D data is a 1xN or Nx1 tensor; scalars are 1x1.
class Tensor {
 public:
  Tensor() = default;
  Tensor(std::size_t rows, std::size_t cols) { resize(rows, cols); }
  Tensor(const Tensor& o) { *this = o; }
  Tensor(Tensor&& o) noexcept { *this = std::move(o); }
  Tensor& operator=(const Tensor& o) {
    if (this == &o) return *this;
    resize(o.rows_, o.cols_);
    for (std::size_t i = 0; i < size(); ++i) data_[i] = o.data_[i];
    return *this;
  }
  Tensor& operator=(Tensor&& o) noexcept {
    if (this == &o) return *this;
    release();
    data_ = o.data_;
    rows_ = o.rows_;
    cols_ = o.cols_;
    o.data_ = nullptr;
    o.rows_ = o.cols_ = 0;
    return *this;
  }
  ~Tensor() { release(); }

  static Tensor zeros(std::size_t rows, std::size_t cols) {
    Tensor t(rows, cols);
    t.fill(0.0);
    return t;
  }
  static Tensor full(std::size_t rows, std::size_t cols, double v) {
    Tensor t(rows, cols);
    t.fill(v);
    return t;
  }
  static Tensor scalar(double v) { return full(1, 1, v); }
  static Tensor from(std::size_t rows, std::size_t cols,
                     std::initializer_list<double> vals) {
    Tensor t(rows, cols);
    assert(vals.size() == t.size());
    std::size_t i = 0;
    for (double v : vals) t.data_[i++] = v;
    return t;
  }

  std::size_t rows() const { return rows_; }
  std::size_t cols() const { return cols_; }
  std::size_t size() const { return rows_ * cols_; }
  bool empty() const { return size() == 0; }

  double* data() { return data_; }
  const double* data() const { return data_; }
  double* row(std::size_t i) { return data_ + i * cols_; }
  const double* row(std::size_t i) const { return data_ + i * cols_; }
  double& at(std::size_t i, std::size_t j) {
    assert(i < rows_ && j < cols_);
    return data_[i * cols_ + j];
  }
  double at(std::size_t i, std::size_t j) const {
    assert(i < rows_ && j < cols_);
    return data_[i * cols_ + j];
  }
  double& operator[](std::size_t i) { return data_[i]; }
  double operator[](std::size_t i) const { return data_[i]; }

  void fill(double v) {
    for (std::size_t i = 0; i < size(); ++i) data_[i] = v;
  }
  void resize(std::size_t rows, std::size_t cols) {
    if (rows == rows_ && cols == cols_) return;
    release();
    rows_ = rows;
    cols_ = cols;
    if (size() > 0) {
      const std::size_t bytes = (size() * sizeof(double) + 63) / 64 * 64;
      data_ = static_cast<double*>(std::aligned_alloc(64, bytes));
      if (!data_) throw std::bad_alloc();
    }
  }
  bool same_shape(const Tensor& o) const {
    return rows_ == o.rows_ && cols_ == o.cols_;
  }

 private:
  void release() {
    std::free(data_);
    data_ = nullptr;
    rows_ = cols_ = 0;
  }

  double* data_ = nullptr;
  std::size_t rows_ = 0;
  std::size_t cols_ = 0;
};

}  // namespace flow4d
