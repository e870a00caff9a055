#pragma once

#include <optional>
#include <string>
#include <string_view>

#include "deepfusion/tensor.hpp"

namespace deepfusion {

// ---------------------------------------------------------------------------
// Variants: the three execution layouts for one SwiGLU block. FourKernel and
// TwoKernel are the reference executors in this header; the fused executor
// lives in fused.hpp.
// ---------------------------------------------------------------------------
enum class VariantTag { FourKernel, TwoKernel, Fused };

std::string_view to_string(VariantTag v);
std::optional<VariantTag> variant_from_string(std::string_view s);

// Accounting mode for instrumented runs.
//   IdealReuse  — each buffer element is charged once per kernel touching it
//                 (perfect intra-kernel caching); the default, and the mode
//                 the traffic model predicts.
//   RawUncached — the naive loop's actual access multiplicities, exposed for
//                 diagnostics (e.g. a GEMM input row re-read per output col).
// Both modes produce bit-identical numeric results.
enum class Accounting { IdealReuse, RawUncached };

// Canonical global-buffer names used by executors and the traffic model.
namespace buffers {
inline constexpr const char* kX = "X";
inline constexpr const char* kWUp = "W_up";
inline constexpr const char* kWGate = "W_gate";
inline constexpr const char* kWDown = "W_down";
inline constexpr const char* kAGate = "A_gate";
inline constexpr const char* kA1 = "A_1";
inline constexpr const char* kASilu = "A_silu";
inline constexpr const char* kA2 = "A_2";
// Concatenated [A_gate | A_1] buffer of the two-kernel layout; gate columns
// first (pinned for instrumentation determinism).
inline constexpr const char* kGateUp = "A_gate_up";
inline constexpr const char* kY = "Y";
}  // namespace buffers

// ---------------------------------------------------------------------------
// MlpWeights: the three projection matrices of one block.
// ---------------------------------------------------------------------------
struct MlpWeights {
  Matrix w_up;    // d_model x d_ff
  Matrix w_gate;  // d_model x d_ff
  Matrix w_down;  // d_ff x d_model
  MlpShape shape;

  // Throws ShapeError if matrix dims are inconsistent with `shape`.
  void validate() const;
};

MlpWeights make_random_weights(const MlpShape& shape, std::mt19937_64& rng,
                               double scale = 1.0);

// Binds x and all three weights to `ledger` under the canonical names.
// Intermediates created by executors inherit the ledger from x.
void bind_inputs(AccessLedger& ledger, Matrix& x, MlpWeights& w);

// ---------------------------------------------------------------------------
// Executors.
//
// Stage 1 computes A_2 = (X W_up) ⊗ SiLU(X W_gate); stage 2 is the shared
// down projection Y = A_2 W_down, identical across variants so comparisons
// isolate stage-1 behavior.
// ---------------------------------------------------------------------------

// Naive layout: four stage-1 kernel launches (GEMM A_gate, GEMM A_1,
// pointwise SiLU, pointwise gate-multiply), each intermediate materialized
// as a full instrumented buffer.
void run_four_kernel_stage1(const Matrix& x, const MlpWeights& w, Matrix& a2,
                            Accounting mode = Accounting::IdealReuse);
Matrix run_four_kernel(const Matrix& x, const MlpWeights& w,
                       Accounting mode = Accounting::IdealReuse);

// Grouped layout: one GEMM writing the concatenated [A_gate | A_1] buffer
// (reading X once), then a fused silu-and-mul kernel.
void run_two_kernel_stage1(const Matrix& x, const MlpWeights& w, Matrix& a2,
                           Accounting mode = Accounting::IdealReuse);
Matrix run_two_kernel(const Matrix& x, const MlpWeights& w,
                      Accounting mode = Accounting::IdealReuse);

// Shared stage 2. The returned Y inherits a2's ledger.
Matrix down_projection(const Matrix& a2, const Matrix& w_down,
                       Accounting mode = Accounting::IdealReuse);

}  // namespace deepfusion
