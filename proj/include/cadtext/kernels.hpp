#pragma once

// Dense row-major matrix plus the numeric kernels the encoder is built from.
//
// Every kernel exists twice: kernels::serial holds the plain reference loops,
// and the unqualified kernels:: versions are OpenMP-parallel over output rows.
// Both accumulate each output element over the reduction index in ascending
// order, so the two paths agree bitwise for any thread count.

#include <algorithm>
#include <cassert>
#include <cstddef>
#include <cstdint>
#include <span>
#include <vector>

namespace cadtext {

template <typename T>
class Matrix {
 public:
  Matrix() = default;
  Matrix(std::size_t rows, std::size_t cols, T fill = T{0})
      : rows_(rows), cols_(cols), data_(rows * cols, fill) {}

  std::size_t rows() const { return rows_; }
  std::size_t cols() const { return cols_; }
  std::size_t size() const { return data_.size(); }
  bool empty() const { return data_.empty(); }

  T* data() { return data_.data(); }
  const T* data() const { return data_.data(); }
  std::vector<T>& values() { return data_; }
  const std::vector<T>& values() const { return data_; }

  T& operator()(std::size_t r, std::size_t c) {
    assert(r < rows_ && c < cols_);
    return data_[r * cols_ + c];
  }
  const T& operator()(std::size_t r, std::size_t c) const {
    assert(r < rows_ && c < cols_);
    return data_[r * cols_ + c];
  }

  std::span<T> row(std::size_t r) { return {data_.data() + r * cols_, cols_}; }
  std::span<const T> row(std::size_t r) const { return {data_.data() + r * cols_, cols_}; }

  void fill(T v) { std::fill(data_.begin(), data_.end(), v); }
  bool same_shape(const Matrix& o) const { return rows_ == o.rows_ && cols_ == o.cols_; }

  bool operator==(const Matrix&) const = default;

 private:
  std::size_t rows_ = 0;
  std::size_t cols_ = 0;
  std::vector<T> data_;
};

namespace kernels {

namespace serial {

// C += A * B
template <typename T>
void matmul_acc(const Matrix<T>& a, const Matrix<T>& b, Matrix<T>& c);
// C += A * B^T
template <typename T>
void matmul_nt_acc(const Matrix<T>& a, const Matrix<T>& b, Matrix<T>& c);
// C += A^T * B
template <typename T>
void matmul_tn_acc(const Matrix<T>& a, const Matrix<T>& b, Matrix<T>& c);

// Row-wise softmax of `scores` in place. Columns with key_mask[c] == 0 get
// probability exactly 0. A row with every key masked becomes all zeros.
template <typename T>
void masked_softmax_rows(Matrix<T>& scores, std::span<const std::uint8_t> key_mask);

// Normalizes each row to zero mean / unit variance. Writes the normalized
// rows to `xhat` and 1/sqrt(var + eps) per row to `rstd`.
template <typename T>
void layer_norm_rows(const Matrix<T>& x, T eps, Matrix<T>& xhat, std::vector<T>& rstd);

}  // namespace serial

template <typename T>
void matmul_acc(const Matrix<T>& a, const Matrix<T>& b, Matrix<T>& c);
template <typename T>
void matmul_nt_acc(const Matrix<T>& a, const Matrix<T>& b, Matrix<T>& c);
template <typename T>
void matmul_tn_acc(const Matrix<T>& a, const Matrix<T>& b, Matrix<T>& c);
template <typename T>
void masked_softmax_rows(Matrix<T>& scores, std::span<const std::uint8_t> key_mask);
template <typename T>
void layer_norm_rows(const Matrix<T>& x, T eps, Matrix<T>& xhat, std::vector<T>& rstd);

template <typename T>
Matrix<T> matmul(const Matrix<T>& a, const Matrix<T>& b) {
  Matrix<T> c(a.rows(), b.cols());
  matmul_acc(a, b, c);
  return c;
}

template <typename T>
Matrix<T> matmul_nt(const Matrix<T>& a, const Matrix<T>& b) {
  Matrix<T> c(a.rows(), b.rows());
  matmul_nt_acc(a, b, c);
  return c;
}

template <typename T>
Matrix<T> transpose(const Matrix<T>& a) {
  Matrix<T> t(a.cols(), a.rows());
  for (std::size_t r = 0; r < a.rows(); ++r)
    for (std::size_t c = 0; c < a.cols(); ++c) t(c, r) = a(r, c);
  return t;
}

// Adds a 1 x cols bias row to every row of `x`.
template <typename T>
void add_row_bias(Matrix<T>& x, const Matrix<T>& bias) {
  assert(bias.rows() == 1 && bias.cols() == x.cols());
  for (std::size_t r = 0; r < x.rows(); ++r) {
    auto row = x.row(r);
    for (std::size_t c = 0; c < row.size(); ++c) row[c] += bias.data()[c];
  }
}

// bias_grad += column sums of dy
template <typename T>
void acc_column_sums(const Matrix<T>& dy, Matrix<T>& bias_grad) {
  for (std::size_t r = 0; r < dy.rows(); ++r) {
    auto row = dy.row(r);
    for (std::size_t c = 0; c < row.size(); ++c) bias_grad.data()[c] += row[c];
  }
}

}  // namespace kernels
}  // namespace cadtext
