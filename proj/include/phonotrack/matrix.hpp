#pragma once

#include <cassert>
#include <cstddef>
#include <span>
#include <vector>

namespace phonotrack {

// Dense row-major matrix. Rows are time samples throughout the library, so a
// row is one multichannel sample and consecutive rows are contiguous.
template <class T>
class Matrix {
 public:
  Matrix() = default;
  Matrix(std::size_t rows, std::size_t cols, T fill = T{}) : rows_(rows), cols_(cols), data_(rows * cols, fill) {}
  Matrix(std::size_t rows, std::size_t cols, std::vector<T> data) : rows_(rows), cols_(cols), data_(std::move(data)) {
    assert(data_.size() == rows_ * cols_);
  }

  std::size_t rows() const { return rows_; }
  std::size_t cols() const { return cols_; }
  std::size_t size() const { return data_.size(); }
  bool empty() const { return data_.empty(); }

  T& operator()(std::size_t r, std::size_t c) { return data_[r * cols_ + c]; }
  const T& operator()(std::size_t r, std::size_t c) const { return data_[r * cols_ + c]; }

  std::span<T> row(std::size_t r) { return {data_.data() + r * cols_, cols_}; }
  std::span<const T> row(std::size_t r) const { return {data_.data() + r * cols_, cols_}; }

  T* data() { return data_.data(); }
  const T* data() const { return data_.data(); }
  std::vector<T>& values() { return data_; }
  const std::vector<T>& values() const { return data_; }

  std::vector<T> col(std::size_t c) const {
    std::vector<T> out(rows_);
    for (std::size_t r = 0; r < rows_; ++r) out[r] = (*this)(r, c);
    return out;
  }

  Matrix slice_rows(std::size_t begin, std::size_t end) const {
    assert(begin <= end && end <= rows_);
    return Matrix(end - begin, cols_,
                  std::vector<T>(data_.begin() + begin * cols_, data_.begin() + end * cols_));
  }

  bool operator==(const Matrix& o) const = default;

 private:
  std::size_t rows_ = 0;
  std::size_t cols_ = 0;
  std::vector<T> data_;
};

// Non-owning read-only view over a contiguous block of rows.
template <class T>
struct MatrixView {
  const T* ptr = nullptr;
  std::size_t rows = 0;
  std::size_t cols = 0;

  const T& operator()(std::size_t r, std::size_t c) const { return ptr[r * cols + c]; }
  std::span<const T> row(std::size_t r) const { return {ptr + r * cols, cols}; }

  static MatrixView of(const Matrix<T>& m, std::size_t first_row, std::size_t n_rows) {
    assert(first_row + n_rows <= m.rows());
    return {m.data() + first_row * m.cols(), n_rows, m.cols()};
  }
  static MatrixView of(const Matrix<T>& m) { return of(m, 0, m.rows()); }
};

}  // namespace phonotrack
