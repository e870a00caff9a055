#pragma once

#include <cstdint>
#include <string>

#include "deepfusion/swiglu.hpp"
#include "deepfusion/tensor.hpp"

namespace deepfusion {

// ---------------------------------------------------------------------------
// Tiling configuration for the fused stage-1 executor.
//
// RowMajorTiling iterates output tiles with the M (batch row) index
// outermost, keeping X strips resident while weight strips are re-staged per
// row block. ColumnMajorTiling iterates with the N (d_ff column) index
// outermost, keeping weight strips resident while X is re-staged per column
// block. The k loop is always innermost within an output tile: SiLU is only
// legal after the full reduction.
// ---------------------------------------------------------------------------
enum class LoopOrder { RowMajorTiling, ColumnMajorTiling };

std::string_view to_string(LoopOrder order);

struct TileConfig {
  Index tile_m = 1;  // rows of X per tile
  Index tile_n = 1;  // d_ff columns per tile
  Index tile_k = 1;  // reduction chunk along d_model
  LoopOrder loop_order = LoopOrder::ColumnMajorTiling;

  bool operator==(const TileConfig&) const = default;

  // Throws ShapeError on any tile dimension < 1.
  void validate() const;

  // Tile dims may exceed the matrix dims; clamp before use.
  TileConfig clamped(const MlpShape& shape) const;

  std::string describe() const;
};

// One candidate in the scheduler's search space.
struct KernelConfig {
  VariantTag variant = VariantTag::Fused;
  TileConfig tile{};  // meaningful only for Fused
  std::string label;
};

// ---------------------------------------------------------------------------
// Fused stage-1 executor: A_2 = (X W_up) ⊗ SiLU(X W_gate) in a single pass.
//
// Per output tile, both partial dot products accumulate in tile-local
// scratch across all k chunks; the SiLU/multiply epilogue runs only after
// the reduction completes, and the A_2 tile is written to the global buffer
// exactly once. A_gate / A_1 / A_silu never exist as global buffers.
//
// Output tiles are independent; `num_workers` > 1 splits the outer block
// loop across threads. Results and ledger totals are identical for any
// worker count.
// ---------------------------------------------------------------------------
void run_fused_stage1(const Matrix& x, const Matrix& w_up,
                      const Matrix& w_gate, const TileConfig& tile, Matrix& a2,
                      int num_workers = 1);

// Fused stage 1 followed by the shared down projection.
Matrix run_fused(const Matrix& x, const MlpWeights& w, const TileConfig& tile,
                 int num_workers = 1);

// Loop-order-determined global read multiplicities for the fused executor,
// assuming no cross-tile caching of the non-prioritized operand. Instrumented
// runs match these counts exactly.
struct ReuseCounts {
  std::uint64_t x_reads = 0;
  std::uint64_t weight_reads = 0;  // W_up + W_gate combined
  std::uint64_t a2_writes = 0;
};

ReuseCounts predicted_reuse_counts(const MlpShape& shape,
                                   const TileConfig& tile);

// Dispatches stage 1 for any variant (tile used only when Fused).
void run_stage1(VariantTag variant, const Matrix& x, const MlpWeights& w,
                Matrix& a2, const TileConfig& tile = {},
                Accounting mode = Accounting::IdealReuse);

// Full block under a kernel config.
Matrix run_variant(const KernelConfig& config, const Matrix& x,
                   const MlpWeights& w,
                   Accounting mode = Accounting::IdealReuse);

}  // namespace deepfusion
