#include <cmath>
#include <vector>

#include "cadtext/kernels.hpp"
#include "cadtext/random.hpp"
#include "doctest.h"

using namespace cadtext;

namespace {

Matrix<double> random_matrix(std::size_t r, std::size_t c, Rng& rng) {
  Matrix<double> m(r, c);
  for (auto& v : m.values()) v = rng.uniform(-1, 1);
  return m;
}

Matrix<double> naive_matmul(const Matrix<double>& a, const Matrix<double>& b) {
  Matrix<double> c(a.rows(), b.cols());
  for (std::size_t i = 0; i < a.rows(); ++i)
    for (std::size_t j = 0; j < b.cols(); ++j) {
      double s = 0;
      for (std::size_t k = 0; k < a.cols(); ++k) s += a(i, k) * b(k, j);
      c(i, j) = s;
    }
  return c;
}

}  // namespace

TEST_CASE("parallel matmuls agree bitwise with the serial loops") {
  Rng rng(3);
  for (int trial = 0; trial < 20; ++trial) {
    const std::size_t m = 1 + rng.below(40), k = 1 + rng.below(40), n = 1 + rng.below(40);
    auto a = random_matrix(m, k, rng), b = random_matrix(k, n, rng), bt = random_matrix(n, k, rng);
    auto at = random_matrix(k, m, rng);

    Matrix<double> c1(m, n), c2(m, n);
    kernels::serial::matmul_acc(a, b, c1);
    kernels::matmul_acc(a, b, c2);
    CHECK(c1 == c2);

    Matrix<double> d1(m, n), d2(m, n);
    kernels::serial::matmul_nt_acc(a, bt, d1);
    kernels::matmul_nt_acc(a, bt, d2);
    CHECK(d1 == d2);

    Matrix<double> e1(m, n), e2(m, n);
    kernels::serial::matmul_tn_acc(at, b, e1);
    kernels::matmul_tn_acc(at, b, e2);
    CHECK(e1 == e2);
  }
}

TEST_CASE("matmul variants match a triple loop") {
  Rng rng(4);
  auto a = random_matrix(7, 5, rng), b = random_matrix(5, 9, rng);
  const auto ref = naive_matmul(a, b);
  const auto c = kernels::matmul(a, b);
  const auto c_nt = kernels::matmul_nt(a, kernels::transpose(b));
  Matrix<double> c_tn(7, 9);
  kernels::matmul_tn_acc(kernels::transpose(a), b, c_tn);
  for (std::size_t i = 0; i < ref.size(); ++i) {
    CHECK(c.values()[i] == doctest::Approx(ref.values()[i]).epsilon(1e-12));
    CHECK(c_nt.values()[i] == doctest::Approx(ref.values()[i]).epsilon(1e-12));
    CHECK(c_tn.values()[i] == doctest::Approx(ref.values()[i]).epsilon(1e-12));
  }
}

TEST_CASE("accumulating matmul adds to the existing output") {
  Matrix<double> a(1, 1, 2.0), b(1, 1, 3.0), c(1, 1, 1.0);
  kernels::matmul_acc(a, b, c);
  CHECK(c(0, 0) == 7.0);
}

TEST_CASE("masked softmax") {
  Rng rng(5);
  SUBCASE("rows sum to one over unmasked keys, masked keys exactly zero") {
    for (int trial = 0; trial < 50; ++trial) {
      const std::size_t n = 2 + rng.below(30);
      auto s = random_matrix(n, n, rng);
      for (auto& v : s.values()) v *= 20;
      std::vector<std::uint8_t> mask(n);
      for (auto& m : mask) m = rng.bernoulli(0.7);
      mask[0] = 1;
      auto p = s;
      kernels::masked_softmax_rows(p, mask);
      auto q = s;
      kernels::serial::masked_softmax_rows(q, std::span<const std::uint8_t>(mask));
      CHECK(p == q);
      for (std::size_t r = 0; r < n; ++r) {
        double sum = 0;
        for (std::size_t c = 0; c < n; ++c) {
          if (!mask[c]) CHECK(p(r, c) == 0.0);
          sum += p(r, c);
        }
        CHECK(std::abs(sum - 1.0) <= 1e-12);
      }
    }
  }
  SUBCASE("all keys masked gives a zero row") {
    auto s = random_matrix(3, 4, rng);
    std::vector<std::uint8_t> mask(4, 0);
    kernels::masked_softmax_rows(s, mask);
    for (double v : s.values()) CHECK(v == 0.0);
  }
  SUBCASE("huge scores do not overflow") {
    Matrix<double> s(1, 3);
    s(0, 0) = 1e300;
    s(0, 1) = 1e300;
    s(0, 2) = -1e300;
    std::vector<std::uint8_t> mask(3, 1);
    kernels::masked_softmax_rows(s, mask);
    CHECK(s(0, 0) == doctest::Approx(0.5));
    CHECK(s(0, 2) == 0.0);
  }
  SUBCASE("float rows") {
    Matrix<float> s(2, 5, 1.0f);
    std::vector<std::uint8_t> mask = {1, 1, 0, 1, 1};
    kernels::masked_softmax_rows(s, mask);
    CHECK(s(1, 0) == doctest::Approx(0.25f));
  }
}

TEST_CASE("layer norm rows have zero mean and unit variance") {
  Rng rng(6);
  auto x = random_matrix(10, 16, rng);
  for (auto& v : x.values()) v = v * 5 + 3;
  Matrix<double> xhat, xhat2;
  std::vector<double> rstd, rstd2;
  kernels::layer_norm_rows(x, 1e-5, xhat, rstd);
  kernels::serial::layer_norm_rows(x, 1e-5, xhat2, rstd2);
  CHECK(xhat == xhat2);
  CHECK(rstd == rstd2);
  for (std::size_t r = 0; r < x.rows(); ++r) {
    double mean = 0, var = 0, ref_mean = 0, ref_var = 0;
    for (std::size_t c = 0; c < x.cols(); ++c) ref_mean += x(r, c);
    ref_mean /= x.cols();
    for (std::size_t c = 0; c < x.cols(); ++c) ref_var += (x(r, c) - ref_mean) * (x(r, c) - ref_mean);
    ref_var /= x.cols();
    for (std::size_t c = 0; c < x.cols(); ++c) mean += xhat(r, c);
    mean /= x.cols();
    for (std::size_t c = 0; c < x.cols(); ++c) var += (xhat(r, c) - mean) * (xhat(r, c) - mean);
    var /= x.cols();
    CHECK(std::abs(mean) < 1e-12);
    CHECK(var == doctest::Approx(ref_var / (ref_var + 1e-5)).epsilon(1e-9));
    CHECK(rstd[r] == doctest::Approx(1.0 / std::sqrt(ref_var + 1e-5)).epsilon(1e-12));
  }
}

TEST_CASE("row bias and column sums") {
  Matrix<double> x(2, 3, 1.0), bias(1, 3);
  bias(0, 1) = 2;
  kernels::add_row_bias(x, bias);
  CHECK(x(1, 1) == 3.0);
  Matrix<double> g(1, 3);
  kernels::acc_column_sums(x, g);
  CHECK(g(0, 0) == 2.0);
  CHECK(g(0, 1) == 6.0);
}
