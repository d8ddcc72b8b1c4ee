#include "cadtext/kernels.hpp"

#include <cmath>
#include <limits>

namespace cadtext::kernels {

namespace {

// Below this many multiply-adds the fork/join costs more than it saves.
constexpr std::size_t kParallelWork = 1 << 15;

template <typename T>
void softmax_row(std::span<T> row, std::span<const std::uint8_t> key_mask) {
  T mx = -std::numeric_limits<T>::infinity();
  for (std::size_t c = 0; c < row.size(); ++c)
    if (key_mask[c]) mx = std::max(mx, row[c]);
  if (!std::isfinite(mx)) {
    std::fill(row.begin(), row.end(), T{0});
    return;
  }
  T sum = 0;
  for (std::size_t c = 0; c < row.size(); ++c) {
    row[c] = key_mask[c] ? std::exp(row[c] - mx) : T{0};
    sum += row[c];
  }
  for (auto& v : row) v /= sum;
}

}  // namespace

namespace serial {

template <typename T>
void matmul_acc(const Matrix<T>& a, const Matrix<T>& b, Matrix<T>& c) {
  assert(a.cols() == b.rows() && c.rows() == a.rows() && c.cols() == b.cols());
  const std::size_t m = a.rows(), k = a.cols(), n = b.cols();
  for (std::size_t i = 0; i < m; ++i) {
    T* crow = c.data() + i * n;
    for (std::size_t p = 0; p < k; ++p) {
      const T av = a(i, p);
      const T* brow = b.data() + p * n;
      for (std::size_t j = 0; j < n; ++j) crow[j] += av * brow[j];
    }
  }
}

template <typename T>
void matmul_nt_acc(const Matrix<T>& a, const Matrix<T>& b, Matrix<T>& c) {
  assert(a.cols() == b.cols() && c.rows() == a.rows() && c.cols() == b.rows());
  matmul_acc(a, transpose(b), c);
}

template <typename T>
void matmul_tn_acc(const Matrix<T>& a, const Matrix<T>& b, Matrix<T>& c) {
  assert(a.rows() == b.rows() && c.rows() == a.cols() && c.cols() == b.cols());
  const std::size_t m = a.rows(), k = a.cols(), n = b.cols();
  for (std::size_t i = 0; i < m; ++i) {
    const T* brow = b.data() + i * n;
    for (std::size_t p = 0; p < k; ++p) {
      const T av = a(i, p);
      T* crow = c.data() + p * n;
      for (std::size_t j = 0; j < n; ++j) crow[j] += av * brow[j];
    }
  }
}

template <typename T>
void masked_softmax_rows(Matrix<T>& scores, std::span<const std::uint8_t> key_mask) {
  assert(key_mask.size() == scores.cols());
  for (std::size_t r = 0; r < scores.rows(); ++r) softmax_row(scores.row(r), key_mask);
}

template <typename T>
void layer_norm_rows(const Matrix<T>& x, T eps, Matrix<T>& xhat, std::vector<T>& rstd) {
  xhat = Matrix<T>(x.rows(), x.cols());
  rstd.assign(x.rows(), T{0});
  const T n = static_cast<T>(x.cols());
  for (std::size_t r = 0; r < x.rows(); ++r) {
    auto in = x.row(r);
    T mean = 0;
    for (T v : in) mean += v;
    mean /= n;
    T var = 0;
    for (T v : in) var += (v - mean) * (v - mean);
    var /= n;
    const T s = T{1} / std::sqrt(var + eps);
    rstd[r] = s;
    auto out = xhat.row(r);
    for (std::size_t c = 0; c < in.size(); ++c) out[c] = (in[c] - mean) * s;
  }
}

}  // namespace serial

template <typename T>
void matmul_acc(const Matrix<T>& a, const Matrix<T>& b, Matrix<T>& c) {
  assert(a.cols() == b.rows() && c.rows() == a.rows() && c.cols() == b.cols());
  const std::size_t m = a.rows(), k = a.cols(), n = b.cols();
  const long long rows = static_cast<long long>(m);
#pragma omp parallel for schedule(static) if (m * k * n >= kParallelWork)
  for (long long ii = 0; ii < rows; ++ii) {
    const auto i = static_cast<std::size_t>(ii);
    T* crow = c.data() + i * n;
    const T* arow = a.data() + i * k;
    for (std::size_t p = 0; p < k; ++p) {
      const T av = arow[p];
      const T* brow = b.data() + p * n;
      for (std::size_t j = 0; j < n; ++j) crow[j] += av * brow[j];
    }
  }
}

template <typename T>
void matmul_nt_acc(const Matrix<T>& a, const Matrix<T>& b, Matrix<T>& c) {
  assert(a.cols() == b.cols() && c.rows() == a.rows() && c.cols() == b.rows());
  matmul_acc(a, transpose(b), c);
}

template <typename T>
void matmul_tn_acc(const Matrix<T>& a, const Matrix<T>& b, Matrix<T>& c) {
  assert(a.rows() == b.rows() && c.rows() == a.cols() && c.cols() == b.cols());
  const std::size_t m = a.rows(), k = a.cols(), n = b.cols();
  const long long outs = static_cast<long long>(k);
#pragma omp parallel for schedule(static) if (m * k * n >= kParallelWork)
  for (long long pp = 0; pp < outs; ++pp) {
    const auto p = static_cast<std::size_t>(pp);
    T* crow = c.data() + p * n;
    for (std::size_t i = 0; i < m; ++i) {
      const T av = a(i, p);
      const T* brow = b.data() + i * n;
      for (std::size_t j = 0; j < n; ++j) crow[j] += av * brow[j];
    }
  }
}

template <typename T>
void masked_softmax_rows(Matrix<T>& scores, std::span<const std::uint8_t> key_mask) {
  assert(key_mask.size() == scores.cols());
  const long long rows = static_cast<long long>(scores.rows());
#pragma omp parallel for schedule(static) if (scores.size() >= kParallelWork)
  for (long long r = 0; r < rows; ++r) softmax_row(scores.row(static_cast<std::size_t>(r)), key_mask);
}

template <typename T>
void layer_norm_rows(const Matrix<T>& x, T eps, Matrix<T>& xhat, std::vector<T>& rstd) {
  serial::layer_norm_rows(x, eps, xhat, rstd);
}

#define CADTEXT_INSTANTIATE(T)                                                          \
  template void serial::matmul_acc<T>(const Matrix<T>&, const Matrix<T>&, Matrix<T>&);  \
  template void serial::matmul_nt_acc<T>(const Matrix<T>&, const Matrix<T>&, Matrix<T>&); \
  template void serial::matmul_tn_acc<T>(const Matrix<T>&, const Matrix<T>&, Matrix<T>&); \
  template void serial::masked_softmax_rows<T>(Matrix<T>&, std::span<const std::uint8_t>); \
  template void serial::layer_norm_rows<T>(const Matrix<T>&, T, Matrix<T>&, std::vector<T>&); \
  template void matmul_acc<T>(const Matrix<T>&, const Matrix<T>&, Matrix<T>&);          \
  template void matmul_nt_acc<T>(const Matrix<T>&, const Matrix<T>&, Matrix<T>&);       \
  template void matmul_tn_acc<T>(const Matrix<T>&, const Matrix<T>&, Matrix<T>&);       \
  template void masked_softmax_rows<T>(Matrix<T>&, std::span<const std::uint8_t>);       \
  template void layer_norm_rows<T>(const Matrix<T>&, T, Matrix<T>&, std::vector<T>&);

CADTEXT_INSTANTIATE(float)
CADTEXT_INSTANTIATE(double)

#undef CADTEXT_INSTANTIATE

}  // namespace cadtext::kernels
