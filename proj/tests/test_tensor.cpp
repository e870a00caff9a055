#include <doctest.h>

#include <cmath>
#include <random>
#include <thread>
#include <vector>

#include "deepfusion/tensor.hpp"

using namespace deepfusion;

namespace {

Matrix from_rows(const std::vector<std::vector<double>>& rows) {
  Matrix m(static_cast<Index>(rows.size()),
           static_cast<Index>(rows[0].size()));
  for (Index i = 0; i < m.rows(); ++i) {
    for (Index j = 0; j < m.cols(); ++j) {
      m(i, j) = rows[static_cast<std::size_t>(i)][static_cast<std::size_t>(j)];
    }
  }
  return m;
}

// Scalar triple-loop oracle, independent of the library loops.
Matrix matmul_oracle(const Matrix& a, const Matrix& b) {
  Matrix out(a.rows(), b.cols());
  for (Index i = 0; i < a.rows(); ++i) {
    for (Index j = 0; j < b.cols(); ++j) {
      double acc = 0.0;
      for (Index p = 0; p < a.cols(); ++p) {
        acc += a(i, p) * b(p, j);
      }
      out(i, j) = acc;
    }
  }
  return out;
}

double max_diff(const Matrix& a, const Matrix& b) {
  double worst = 0.0;
  for (Index i = 0; i < a.rows(); ++i) {
    for (Index j = 0; j < a.cols(); ++j) {
      worst = std::max(worst, std::abs(a(i, j) - b(i, j)));
    }
  }
  return worst;
}

}  // namespace

TEST_CASE("matmul identity and scalar cases") {
  Matrix a = from_rows({{1, 2}, {3, 4}});
  Matrix out(2, 2);
  matmul(a, Matrix::identity(2), out);
  CHECK(max_diff(out, a) == 0.0);

  Matrix v = from_rows({{5}, {7}});
  Matrix out2(2, 1);
  matmul(Matrix::identity(2), v, out2);
  CHECK(max_diff(out2, v) == 0.0);

  Matrix row = from_rows({{1, 2}});
  Matrix col = from_rows({{3}, {4}});
  Matrix out3(1, 1);
  matmul(row, col, out3);
  CHECK(out3(0, 0) == 11.0);  // 1*3 + 2*4
}

TEST_CASE("matmul rejects mismatched shapes, naming operands") {
  Matrix a(2, 3), b(4, 5), out(2, 5);
  CHECK_THROWS_AS(matmul(a, b, out), ShapeError);
  try {
    matmul(a, b, out);
  } catch (const ShapeError& e) {
    const std::string msg = e.what();
    CHECK(msg.find("2x3") != std::string::npos);
    CHECK(msg.find("4x5") != std::string::npos);
  }
  Matrix c(3, 5), bad_out(2, 4);
  CHECK_THROWS_AS(matmul(a, c, bad_out), ShapeError);
}

TEST_CASE("matmul agrees with the triple-loop oracle on random sizes") {
  std::mt19937_64 rng(42);
  for (int trial = 0; trial < 50; ++trial) {
    const Index m = 1 + static_cast<Index>(rng() % 16);
    const Index k = 1 + static_cast<Index>(rng() % 16);
    const Index n = 1 + static_cast<Index>(rng() % 16);
    Matrix a(m, k), b(k, n), out(m, n);
    fill_uniform(a, rng);
    fill_uniform(b, rng);
    matmul(a, b, out);
    CHECK(max_diff(out, matmul_oracle(a, b)) <= 1e-12);
  }
}

TEST_CASE("naive matmul raw access counts") {
  const Index m = 3, k = 4, n = 5;
  AccessLedger ledger;
  Matrix a(m, k), b(k, n), out(m, n);
  std::mt19937_64 rng(1);
  fill_uniform(a, rng);
  fill_uniform(b, rng);
  a.bind(ledger, "A");
  b.bind(ledger, "B");
  out.bind(ledger, "out");
  matmul(a, b, out);
  CHECK(ledger.counts("A").reads == static_cast<std::uint64_t>(m * k * n));
  CHECK(ledger.counts("B").reads == static_cast<std::uint64_t>(m * k * n));
  CHECK(ledger.counts("out").writes == static_cast<std::uint64_t>(m * n));
  CHECK(ledger.counts("out").reads == 0);
}

TEST_CASE("sigmoid and silu frozen values") {
  CHECK(sigmoid(0.0) == 0.5);
  CHECK(std::abs(sigmoid(50.0) - 1.0) <= 1e-15);
  CHECK(std::abs(sigmoid(1.0) - 0.7310585786300049) <= 1e-15);
  CHECK(silu(0.0) == 0.0);
  CHECK(std::abs(silu(-50.0)) <= 1e-15);
  CHECK(std::abs(silu(1.0) - 0.7310585786300049) <= 1e-15);
}

TEST_CASE("silu(x) - silu(-x) == x over [-20, 20]") {
  for (double x = -20.0; x <= 20.0; x += 0.1) {
    CHECK(std::abs(silu(x) - silu(-x) - x) <= 1e-12);
  }
}

TEST_CASE("elementwise_mul basics and counts") {
  Matrix a = from_rows({{2, 3}});
  Matrix b = from_rows({{4, 5}});
  Matrix out(1, 2);
  elementwise_mul(a, b, out);
  CHECK(out(0, 0) == 8.0);
  CHECK(out(0, 1) == 15.0);

  Matrix ones(1, 2);
  ones(0, 0) = ones(0, 1) = 1.0;
  elementwise_mul(a, ones, out);
  CHECK(max_diff(out, a) == 0.0);

  Matrix zeros(1, 2);
  elementwise_mul(zeros, b, out);
  CHECK(out(0, 0) == 0.0);
  CHECK(out(0, 1) == 0.0);

  Matrix bad(2, 2);
  CHECK_THROWS_AS(elementwise_mul(a, bad, out), ShapeError);

  AccessLedger ledger;
  a.bind(ledger, "A");
  b.bind(ledger, "B");
  out.bind(ledger, "out");
  elementwise_mul(a, b, out);
  CHECK(ledger.counts("A").reads == 2);
  CHECK(ledger.counts("B").reads == 2);
  CHECK(ledger.counts("out").writes == 2);
}

TEST_CASE("Matrix rejects degenerate dimensions") {
  CHECK_THROWS_AS(Matrix(0, 3), ShapeError);
  CHECK_THROWS_AS(Matrix(3, 0), ShapeError);
  CHECK_NOTHROW(Matrix(1, 1));
}

TEST_CASE("MlpShape validation and ratio flag") {
  CHECK_THROWS_AS((MlpShape{0, 4, 8}.validate()), ShapeError);
  CHECK_NOTHROW((MlpShape{1, 4, 8}.validate()));
  CHECK(MlpShape{1, 512, 2048}.ff_ratio_typical());
  CHECK(MlpShape{1, 512, 1792}.ff_ratio_typical());  // 3.5x
  CHECK_FALSE(MlpShape{1, 512, 1024}.ff_ratio_typical());
  CHECK_FALSE(MlpShape{1, 512, 4096}.ff_ratio_typical());
}

TEST_CASE("AccessLedger reset and monotone counts") {
  AccessLedger ledger;
  Matrix m(2, 2);
  m.bind(ledger, "buf");
  (void)m.load(0, 0);
  m.store(1, 1, 3.0);
  CHECK(ledger.counts("buf").reads == 1);
  CHECK(ledger.counts("buf").writes == 1);
  (void)m.load(0, 1);
  CHECK(ledger.counts("buf").reads == 2);  // non-decreasing
  ledger.reset();
  CHECK(ledger.counts("buf").reads == 0);
  CHECK(ledger.counts("buf").writes == 0);
  CHECK(ledger.has("buf"));
}

TEST_CASE("AccessLedger tolerates concurrent increments exactly") {
  AccessLedger ledger;
  Matrix m(1, 1);
  m.bind(ledger, "shared");
  constexpr int kThreads = 4;
  constexpr int kPerThread = 10000;
  std::vector<std::thread> pool;
  for (int t = 0; t < kThreads; ++t) {
    pool.emplace_back([&m] {
      for (int i = 0; i < kPerThread; ++i) {
        (void)m.load(0, 0);
      }
    });
  }
  for (auto& th : pool) th.join();
  CHECK(ledger.counts("shared").reads ==
        static_cast<std::uint64_t>(kThreads) * kPerThread);
}

TEST_CASE("fill_uniform is deterministic for a fixed seed") {
  std::mt19937_64 rng1(7), rng2(7);
  Matrix a(3, 3), b(3, 3);
  fill_uniform(a, rng1);
  fill_uniform(b, rng2);
  CHECK(max_diff(a, b) == 0.0);
  for (Index i = 0; i < 3; ++i) {
    for (Index j = 0; j < 3; ++j) {
      CHECK(a(i, j) >= -1.0);
      CHECK(a(i, j) < 1.0);
    }
  }
}
