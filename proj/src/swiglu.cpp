#include "deepfusion/swiglu.hpp"

#include <sstream>
#include <vector>

#include "deepfusion/detail/cores.hpp"

namespace deepfusion {

std::string_view to_string(VariantTag v) {
  switch (v) {
    case VariantTag::FourKernel: return "four_kernel";
    case VariantTag::TwoKernel: return "two_kernel";
    case VariantTag::Fused: return "fused";
  }
  return "unknown";
}

std::optional<VariantTag> variant_from_string(std::string_view s) {
  if (s == "four_kernel" || s == "four-kernel") return VariantTag::FourKernel;
  if (s == "two_kernel" || s == "two-kernel") return VariantTag::TwoKernel;
  if (s == "fused") return VariantTag::Fused;
  return std::nullopt;
}

void MlpWeights::validate() const {
  shape.validate();
  auto expect = [](const Matrix& m, Index rows, Index cols, const char* name) {
    if (m.rows() != rows || m.cols() != cols) {
      std::ostringstream msg;
      msg << "MlpWeights: " << name << " is " << m.rows() << "x" << m.cols()
          << ", expected " << rows << "x" << cols;
      throw ShapeError(msg.str());
    }
  };
  expect(w_up, shape.d_model, shape.d_ff, "w_up");
  expect(w_gate, shape.d_model, shape.d_ff, "w_gate");
  expect(w_down, shape.d_ff, shape.d_model, "w_down");
}

MlpWeights make_random_weights(const MlpShape& shape, std::mt19937_64& rng,
                               double scale) {
  shape.validate();
  MlpWeights w{Matrix(shape.d_model, shape.d_ff),
               Matrix(shape.d_model, shape.d_ff),
               Matrix(shape.d_ff, shape.d_model), shape};
  fill_uniform(w.w_up, rng, -scale, scale);
  fill_uniform(w.w_gate, rng, -scale, scale);
  fill_uniform(w.w_down, rng, -scale, scale);
  return w;
}

void bind_inputs(AccessLedger& ledger, Matrix& x, MlpWeights& w) {
  x.bind(ledger, buffers::kX);
  w.w_up.bind(ledger, buffers::kWUp);
  w.w_gate.bind(ledger, buffers::kWGate);
  w.w_down.bind(ledger, buffers::kWDown);
}

namespace {

void check_input(const Matrix& x, const MlpWeights& w) {
  w.validate();
  if (x.cols() != w.shape.d_model) {
    std::ostringstream msg;
    msg << "executor: x has " << x.cols() << " columns, weights expect d_model="
        << w.shape.d_model;
    throw ShapeError(msg.str());
  }
}

void check_stage1_output(const Matrix& x, const MlpWeights& w,
                         const Matrix& a2) {
  if (a2.rows() != x.rows() || a2.cols() != w.shape.d_ff) {
    std::ostringstream msg;
    msg << "executor: a2 is " << a2.rows() << "x" << a2.cols() << ", expected "
        << x.rows() << "x" << w.shape.d_ff;
    throw ShapeError(msg.str());
  }
}

bool any_instrumented(const Matrix& a, const Matrix& b, const Matrix& c) {
  return a.instrumented() || b.instrumented() || c.instrumented();
}

// One-read-per-element staging copy (the instrumented ideal-reuse path's
// stand-in for perfect intra-kernel caching).
std::vector<double> stage_in(const Matrix& m) {
  std::vector<double> buf(static_cast<std::size_t>(m.size()));
  for (Index i = 0; i < m.rows(); ++i) {
    for (Index j = 0; j < m.cols(); ++j) {
      buf[static_cast<std::size_t>(i * m.cols() + j)] = m.load(i, j);
    }
  }
  return buf;
}

// One-write-per-element copy out of kernel scratch.
void stage_out(const std::vector<double>& buf, Matrix& m) {
  for (Index i = 0; i < m.rows(); ++i) {
    for (Index j = 0; j < m.cols(); ++j) {
      m.store(i, j, buf[static_cast<std::size_t>(i * m.cols() + j)]);
    }
  }
}

// One GEMM kernel launch: out = a * b under the requested accounting mode.
void gemm_kernel(const Matrix& a, const Matrix& b, Matrix& out,
                 Accounting mode) {
  if (!any_instrumented(a, b, out)) {
    out.set_zero();
    detail::gemm_accumulate(a.data(), a.cols(), b.data(), b.cols(), out.data(),
                            out.cols(), a.rows(), a.cols(), b.cols());
    return;
  }
  if (mode == Accounting::RawUncached) {
    matmul(a, b, out);
    return;
  }
  const std::vector<double> sa = stage_in(a);
  const std::vector<double> sb = stage_in(b);
  std::vector<double> sc(static_cast<std::size_t>(a.rows() * b.cols()), 0.0);
  detail::gemm_accumulate(sa.data(), a.cols(), sb.data(), b.cols(), sc.data(),
                          b.cols(), a.rows(), a.cols(), b.cols());
  stage_out(sc, out);
}

// Grouped GEMM kernel of the two-kernel layout: one launch reading x once and
// writing [x*w_gate | x*w_up] into `concat` (gate columns first).
void grouped_gemm_kernel(const Matrix& x, const Matrix& w_gate,
                         const Matrix& w_up, Matrix& concat, Accounting mode) {
  const Index m = x.rows(), k = x.cols(), n = w_gate.cols();
  const bool counted =
      any_instrumented(x, w_gate, concat) || w_up.instrumented();
  if (!counted) {
    concat.set_zero();
    detail::gemm_accumulate(x.data(), k, w_gate.data(), n, concat.data(),
                            2 * n, m, k, n);
    detail::gemm_accumulate(x.data(), k, w_up.data(), n, concat.data() + n,
                            2 * n, m, k, n);
    return;
  }
  if (mode == Accounting::RawUncached) {
    for (Index i = 0; i < m; ++i) {
      for (Index j = 0; j < 2 * n; ++j) {
        double acc = 0.0;
        const Matrix& w = j < n ? w_gate : w_up;
        const Index wj = j < n ? j : j - n;
        for (Index p = 0; p < k; ++p) {
          acc += x.load(i, p) * w.load(p, wj);
        }
        concat.store(i, j, acc);
      }
    }
    return;
  }
  const std::vector<double> sx = stage_in(x);
  const std::vector<double> sg = stage_in(w_gate);
  const std::vector<double> su = stage_in(w_up);
  std::vector<double> sc(static_cast<std::size_t>(m * 2 * n), 0.0);
  detail::gemm_accumulate(sx.data(), k, sg.data(), n, sc.data(), 2 * n, m, k,
                          n);
  detail::gemm_accumulate(sx.data(), k, su.data(), n, sc.data() + n, 2 * n, m,
                          k, n);
  stage_out(sc, concat);
}

}  // namespace

void run_four_kernel_stage1(const Matrix& x, const MlpWeights& w, Matrix& a2,
                            Accounting mode) {
  check_input(x, w);
  check_stage1_output(x, w, a2);
  const Index b = x.rows(), d_ff = w.shape.d_ff;
  AccessLedger* lg = x.ledger();

  Matrix a_gate(b, d_ff), a_1(b, d_ff), a_silu(b, d_ff);
  if (lg) {
    a_gate.bind(*lg, buffers::kAGate);
    a_1.bind(*lg, buffers::kA1);
    a_silu.bind(*lg, buffers::kASilu);
  }

  gemm_kernel(x, w.w_gate, a_gate, mode);  // launch 1
  gemm_kernel(x, w.w_up, a_1, mode);       // launch 2
  for (Index i = 0; i < b; ++i) {          // launch 3: pointwise SiLU
    for (Index j = 0; j < d_ff; ++j) {
      a_silu.store(i, j, silu(a_gate.load(i, j)));
    }
  }
  elementwise_mul(a_1, a_silu, a2);        // launch 4: pointwise gate-multiply
}

void run_two_kernel_stage1(const Matrix& x, const MlpWeights& w, Matrix& a2,
                           Accounting mode) {
  check_input(x, w);
  check_stage1_output(x, w, a2);
  const Index b = x.rows(), d_ff = w.shape.d_ff;
  AccessLedger* lg = x.ledger();

  Matrix concat(b, 2 * d_ff);
  if (lg) concat.bind(*lg, buffers::kGateUp);

  grouped_gemm_kernel(x, w.w_gate, w.w_up, concat, mode);
  for (Index i = 0; i < b; ++i) {  // fused silu-and-mul kernel
    for (Index j = 0; j < d_ff; ++j) {
      const double gate = concat.load(i, j);
      const double up = concat.load(i, j + d_ff);
      a2.store(i, j, up * silu(gate));
    }
  }
}

Matrix down_projection(const Matrix& a2, const Matrix& w_down,
                       Accounting mode) {
  if (a2.cols() != w_down.rows()) {
    std::ostringstream msg;
    msg << "down_projection: a2 has " << a2.cols() << " columns, w_down has "
        << w_down.rows() << " rows";
    throw ShapeError(msg.str());
  }
  Matrix y(a2.rows(), w_down.cols());
  if (a2.ledger()) y.bind(*a2.ledger(), buffers::kY);
  gemm_kernel(a2, w_down, y, mode);
  return y;
}

namespace {

Matrix run_full(const Matrix& x, const MlpWeights& w, Accounting mode,
                void (*stage1)(const Matrix&, const MlpWeights&, Matrix&,
                               Accounting)) {
  Matrix a2(x.rows(), w.shape.d_ff);
  if (x.ledger()) a2.bind(*x.ledger(), buffers::kA2);
  stage1(x, w, a2, mode);
  return down_projection(a2, w.w_down, mode);
}

}  // namespace

Matrix run_four_kernel(const Matrix& x, const MlpWeights& w, Accounting mode) {
  return run_full(x, w, mode, &run_four_kernel_stage1);
}

Matrix run_two_kernel(const Matrix& x, const MlpWeights& w, Accounting mode) {
  return run_full(x, w, mode, &run_two_kernel_stage1);
}

}  // namespace deepfusion
