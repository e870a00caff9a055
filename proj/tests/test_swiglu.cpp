#include <doctest.h>

#include <cmath>
#include <random>

#include "deepfusion/swiglu.hpp"
#include "deepfusion/tensor.hpp"

using namespace deepfusion;

namespace {

double max_diff(const Matrix& a, const Matrix& b) {
  double worst = 0.0;
  for (Index i = 0; i < a.rows(); ++i) {
    for (Index j = 0; j < a.cols(); ++j) {
      worst = std::max(worst, std::abs(a(i, j) - b(i, j)));
    }
  }
  return worst;
}

MlpWeights weights_from(const MlpShape& shape,
                        std::initializer_list<double> up,
                        std::initializer_list<double> gate,
                        std::initializer_list<double> down) {
  MlpWeights w{Matrix(shape.d_model, shape.d_ff),
               Matrix(shape.d_model, shape.d_ff),
               Matrix(shape.d_ff, shape.d_model), shape};
  auto fill = [](Matrix& m, std::initializer_list<double> vals) {
    auto it = vals.begin();
    for (Index i = 0; i < m.rows(); ++i) {
      for (Index j = 0; j < m.cols(); ++j) {
        m(i, j) = *it++;
      }
    }
  };
  fill(w.w_up, up);
  fill(w.w_gate, gate);
  fill(w.w_down, down);
  return w;
}

}  // namespace

TEST_CASE("zero input propagates to zero output") {
  const MlpShape shape{1, 3, 4};
  std::mt19937_64 rng(3);
  MlpWeights w = make_random_weights(shape, rng);
  Matrix x(1, 3);  // zeros; SiLU(0) = 0
  CHECK(max_diff(run_four_kernel(x, w), Matrix(1, 3)) == 0.0);
  CHECK(max_diff(run_two_kernel(x, w), Matrix(1, 3)) == 0.0);
}

TEST_CASE("zero gate switches everything off") {
  const MlpShape shape{1, 2, 2};
  MlpWeights w = weights_from(shape, {1, 1, 1, 1}, {0, 0, 0, 0}, {1, 0, 0, 1});
  Matrix x(1, 2);
  x(0, 0) = 1.0;
  const Matrix y = run_four_kernel(x, w);
  CHECK(y(0, 0) == 0.0);
  CHECK(y(0, 1) == 0.0);
}

TEST_CASE("scalar brute-force case: 6 * silu(2)") {
  const MlpShape shape{1, 1, 1};
  MlpWeights w = weights_from(shape, {3}, {1}, {1});
  Matrix x(1, 1);
  x(0, 0) = 2.0;
  // Brute force: (2*3) * silu(2*1) * 1 = 6 * 2 * sigmoid(2).
  const double expected = 6.0 * silu(2.0);
  for (const Matrix& y : {run_four_kernel(x, w), run_two_kernel(x, w)}) {
    CHECK(std::abs(y(0, 0) - expected) <= 1e-15);
  }
  CHECK(expected == doctest::Approx(10.5696).epsilon(1e-4));
}

TEST_CASE("two-kernel equals four-kernel on randomized instances") {
  std::mt19937_64 rng(11);
  double worst = 0.0;
  for (int trial = 0; trial < 200; ++trial) {
    const MlpShape shape{1 + static_cast<Index>(rng() % 8),
                         2 + static_cast<Index>(rng() % 31),
                         2 + static_cast<Index>(rng() % 63)};
    Matrix x(shape.batch, shape.d_model);
    fill_uniform(x, rng);
    MlpWeights w = make_random_weights(shape, rng);
    worst = std::max(worst,
                     max_diff(run_four_kernel(x, w), run_two_kernel(x, w)));
  }
  CHECK(worst <= 1e-10);
}

TEST_CASE("down_projection basics") {
  Matrix a2(1, 2);
  a2(0, 0) = 2.0;
  a2(0, 1) = 3.0;
  Matrix w_down(2, 1);
  w_down(0, 0) = 4.0;
  w_down(1, 0) = 5.0;
  const Matrix y = down_projection(a2, w_down);
  CHECK(y(0, 0) == 23.0);  // dot product

  const Matrix id = Matrix::identity(2);
  const Matrix same = down_projection(a2, id);
  CHECK(max_diff(same, a2) == 0.0);

  Matrix zeros(3, 2);
  CHECK(max_diff(down_projection(zeros, w_down), Matrix(3, 1)) == 0.0);

  Matrix bad(3, 1);
  CHECK_THROWS_AS(down_projection(a2, bad), ShapeError);
}

TEST_CASE("instrumentation neutrality: counted runs are bit-identical") {
  const MlpShape shape{3, 5, 7};
  std::mt19937_64 rng(5);
  Matrix x(shape.batch, shape.d_model);
  fill_uniform(x, rng);
  MlpWeights w = make_random_weights(shape, rng);

  const Matrix plain4 = run_four_kernel(x, w);
  const Matrix plain2 = run_two_kernel(x, w);

  AccessLedger ledger;
  bind_inputs(ledger, x, w);
  CHECK(max_diff(run_four_kernel(x, w), plain4) == 0.0);
  CHECK(max_diff(run_two_kernel(x, w), plain2) == 0.0);
  CHECK(max_diff(run_four_kernel(x, w, Accounting::RawUncached), plain4) ==
        0.0);
  CHECK(max_diff(run_two_kernel(x, w, Accounting::RawUncached), plain2) ==
        0.0);
}

TEST_CASE("stage-1 materializes 4 vs 2 intermediate buffers") {
  const MlpShape shape{2, 4, 8};
  std::mt19937_64 rng(9);
  Matrix x(shape.batch, shape.d_model);
  fill_uniform(x, rng);
  MlpWeights w = make_random_weights(shape, rng);

  AccessLedger ledger4;
  {
    Matrix xi = x;
    MlpWeights wi = w;
    bind_inputs(ledger4, xi, wi);
    Matrix a2(shape.batch, shape.d_ff);
    a2.bind(ledger4, buffers::kA2);
    run_four_kernel_stage1(xi, wi, a2);
  }
  CHECK(ledger4.has(buffers::kAGate));
  CHECK(ledger4.has(buffers::kA1));
  CHECK(ledger4.has(buffers::kASilu));
  CHECK(ledger4.has(buffers::kA2));
  CHECK_FALSE(ledger4.has(buffers::kGateUp));

  AccessLedger ledger2;
  {
    Matrix xi = x;
    MlpWeights wi = w;
    bind_inputs(ledger2, xi, wi);
    Matrix a2(shape.batch, shape.d_ff);
    a2.bind(ledger2, buffers::kA2);
    run_two_kernel_stage1(xi, wi, a2);
  }
  CHECK(ledger2.has(buffers::kGateUp));
  CHECK(ledger2.has(buffers::kA2));
  CHECK_FALSE(ledger2.has(buffers::kAGate));
  CHECK_FALSE(ledger2.has(buffers::kASilu));
}

TEST_CASE("instrumented stage-1 element totals: 192 four-kernel, 152 "
          "two-kernel") {
  const MlpShape shape{2, 4, 8};
  std::mt19937_64 rng(19);
  Matrix x(shape.batch, shape.d_model);
  fill_uniform(x, rng);
  MlpWeights w = make_random_weights(shape, rng);

  auto stage1_total = [&](auto&& runner) {
    Matrix xi = x;
    MlpWeights wi = w;
    AccessLedger ledger;
    bind_inputs(ledger, xi, wi);
    Matrix a2(shape.batch, shape.d_ff);
    a2.bind(ledger, buffers::kA2);
    runner(xi, wi, a2);
    return ledger.total_elements();
  };
  CHECK(stage1_total([](const Matrix& xi, const MlpWeights& wi, Matrix& a2) {
          run_four_kernel_stage1(xi, wi, a2);
        }) == 192);
  CHECK(stage1_total([](const Matrix& xi, const MlpWeights& wi, Matrix& a2) {
          run_two_kernel_stage1(xi, wi, a2);
        }) == 152);
}

TEST_CASE("grouped GEMM halves X reads under ideal accounting") {
  const MlpShape shape{2, 4, 8};
  std::mt19937_64 rng(13);
  Matrix x(shape.batch, shape.d_model);
  fill_uniform(x, rng);
  MlpWeights w = make_random_weights(shape, rng);

  auto stage1_x_reads = [&](auto&& runner) {
    Matrix xi = x;
    MlpWeights wi = w;
    AccessLedger ledger;
    bind_inputs(ledger, xi, wi);
    Matrix a2(shape.batch, shape.d_ff);
    a2.bind(ledger, buffers::kA2);
    runner(xi, wi, a2);
    return ledger.counts(buffers::kX).reads;
  };

  const auto four = stage1_x_reads([](const Matrix& xi, const MlpWeights& wi,
                                      Matrix& a2) {
    run_four_kernel_stage1(xi, wi, a2);
  });
  const auto two = stage1_x_reads([](const Matrix& xi, const MlpWeights& wi,
                                     Matrix& a2) {
    run_two_kernel_stage1(xi, wi, a2);
  });
  CHECK(four == 2 * two);
  CHECK(two == static_cast<std::uint64_t>(shape.batch * shape.d_model));
}

TEST_CASE("executors reject inconsistent weight shapes") {
  const MlpShape shape{1, 3, 4};
  std::mt19937_64 rng(17);
  MlpWeights w = make_random_weights(shape, rng);
  Matrix x(1, 5);  // wrong d_model
  CHECK_THROWS_AS(run_four_kernel(x, w), ShapeError);
  w.shape.d_ff = 9;  // now inconsistent with matrices
  Matrix x2(1, 3);
  CHECK_THROWS_AS(run_two_kernel(x2, w), ShapeError);
}
