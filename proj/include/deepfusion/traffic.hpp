#pragma once

#include <cstdint>
#include <map>
#include <optional>
#include <string>

#include "deepfusion/fused.hpp"
#include "deepfusion/swiglu.hpp"
#include "deepfusion/tensor.hpp"

namespace deepfusion {

// ---------------------------------------------------------------------------
// Analytic global-memory traffic under ideal-reuse accounting: each buffer
// element is charged one transfer per kernel touching it, with fused X/weight
// multiplicities from predicted_reuse_counts. Validated exactly (integer
// equality, per buffer) against instrumented executor runs.
//
// Elements are 64-bit in memory but reported bytes default to 2 per element
// (FP16-equivalent), separating numerical verification from bandwidth
// accounting.
// ---------------------------------------------------------------------------

struct BufferTraffic {
  std::uint64_t reads = 0;
  std::uint64_t writes = 0;

  bool operator==(const BufferTraffic&) const = default;
};

struct TrafficReport {
  std::map<std::string, BufferTraffic> per_buffer;
  std::uint64_t bytes_per_element = 2;

  TrafficReport& add(const std::string& buffer, std::uint64_t reads,
                     std::uint64_t writes);
  void merge(const TrafficReport& other);

  std::uint64_t total_elements() const;
  std::uint64_t total_bytes() const {
    return total_elements() * bytes_per_element;
  }
};

// Stage-1 traffic for one variant; `tile` is required iff variant == Fused.
TrafficReport predict_stage1_traffic(VariantTag variant, const MlpShape& shape,
                                     const std::optional<TileConfig>& tile = {},
                                     std::uint64_t bytes_per_element = 2);

// Stage-2 (down projection) traffic; identical across variants.
TrafficReport predict_stage2_traffic(const MlpShape& shape,
                                     std::uint64_t bytes_per_element = 2);

// Full block = stage 1 + stage 2.
TrafficReport predict_traffic(VariantTag variant, const MlpShape& shape,
                              const std::optional<TileConfig>& tile = {},
                              std::uint64_t bytes_per_element = 2);

// ---------------------------------------------------------------------------
// Prediction vs. instrumentation.
// ---------------------------------------------------------------------------
struct TrafficMismatch {
  std::string buffer;
  BufferTraffic predicted;
  BufferTraffic observed;
};

struct TrafficDiff {
  std::vector<TrafficMismatch> mismatches;

  bool empty() const { return mismatches.empty(); }
  std::string to_string() const;
};

// Per-buffer integer comparison of a prediction against a ledger snapshot;
// buffers present on one side only count as mismatches.
TrafficDiff diff_against(const TrafficReport& predicted,
                         const std::map<std::string, AccessCounts>& observed);

// Runs the instrumented executor on seeded random data for a full block and
// compares per-buffer counts with predict_traffic. Empty diff on agreement.
TrafficDiff verify_against_instrumented(VariantTag variant,
                                        const MlpShape& shape,
                                        const std::optional<TileConfig>& tile,
                                        std::uint64_t seed);

// ---------------------------------------------------------------------------
// FLOPs and arithmetic intensity.
//
// The silu + gate-multiply bundle is costed at a pinned 4 FLOPs per element;
// GEMM work is 2 FLOPs per multiply-add. Stage-1 FLOP counts are derived
// per variant from each layout's own kernel structure (the fused count sums
// the clamped tile grid) and are identical across variants for every shape.
// ---------------------------------------------------------------------------
inline constexpr std::uint64_t kSiluMulFlopsPerElement = 4;

std::uint64_t stage1_flops(VariantTag variant, const MlpShape& shape,
                           const std::optional<TileConfig>& tile = {});

// Stage-1 FLOPs divided by stage-1 predicted bytes.
double arithmetic_intensity(VariantTag variant, const MlpShape& shape,
                            const std::optional<TileConfig>& tile = {},
                            std::uint64_t bytes_per_element = 2);

}  // namespace deepfusion
