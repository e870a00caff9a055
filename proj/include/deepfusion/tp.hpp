#pragma once

#include <cstdint>
#include <string_view>
#include <vector>

#include "deepfusion/fused.hpp"
#include "deepfusion/swiglu.hpp"
#include "deepfusion/tensor.hpp"

namespace deepfusion {

// ---------------------------------------------------------------------------
// Tensor-parallel simulation of one SwiGLU block.
//
// Compound scheme: W_up/W_gate are split column-wise and W_down row-wise over
// the same d_ff ranges, so each device's stage-1 output feeds its own down
// projection locally and a single all-reduce sums the partial Y matrices.
// The naive per-GEMM scheme column-splits each GEMM and all-gathers the full
// result after it, as a comparison baseline.
//
// Devices are simulated sequentially in one process; the claims checked here
// are structural (collective count, payload volume, numerical equivalence).
// ---------------------------------------------------------------------------

struct ColRange {
  Index begin = 0;
  Index end = 0;  // half-open

  Index size() const { return end - begin; }
  bool operator==(const ColRange&) const = default;
};

// Balanced contiguous partition of [0, extent); sizes differ by at most one,
// remainder spread over the first (extent mod parts) ranges.
std::vector<ColRange> balanced_ranges(Index extent, Index parts);

enum class ShardScheme { CompoundSingleAllReduce, NaivePerGemmAllGather };

struct ShardPlan {
  Index num_devices = 1;
  std::vector<ColRange> ff_ranges;  // partition of [0, d_ff)
  ShardScheme scheme = ShardScheme::CompoundSingleAllReduce;

  // Throws ShapeError unless ff_ranges exactly partitions [0, d_ff) with
  // num_devices non-empty ranges.
  void validate(Index d_ff) const;
};

// Throws ShapeError if num_devices < 1 or num_devices > d_ff (an empty shard
// would be degenerate).
ShardPlan make_plan(Index d_ff, Index num_devices,
                    ShardScheme scheme = ShardScheme::CompoundSingleAllReduce);

enum class CollectiveKind { AllReduce, AllGather };

std::string_view to_string(CollectiveKind kind);

struct CollectiveEvent {
  CollectiveKind kind;
  std::uint64_t payload_elements_per_device;
};

struct CollectiveLog {
  std::vector<CollectiveEvent> events;
};

struct TpResult {
  Matrix output;
  CollectiveLog log;
  // Per-device stage-1 outputs (compound scheme only); concatenating them
  // over devices reconstructs the single-device A_2 exactly.
  std::vector<Matrix> stage1_shards;
};

// Compound scheme: exactly one AllReduce event with payload B * d_model per
// device. Output matches the single-device executors within 1e-10.
TpResult run_tp_mlp(const Matrix& x, const MlpWeights& w,
                    const ShardPlan& plan, const KernelConfig& executor);

// Naive column split of a single GEMM y = x * w; one AllGather event.
TpResult run_naive_tp_gemm(const Matrix& x, const Matrix& w,
                           const ShardPlan& plan);

// Naive per-GEMM scheme for the whole block: grouped stage-1 GEMM split +
// gather, local pointwise, down GEMM split + gather — two collectives.
TpResult run_naive_tp_mlp(const Matrix& x, const MlpWeights& w,
                          const ShardPlan& plan);

// ---------------------------------------------------------------------------
// Communication volume per device for a logged block, in bytes.
//   Logical — payload × bytes/element per event, device-count independent.
//   Ring    — 2·(P−1)/P × payload for AllReduce, (P−1)/P × payload for
//             AllGather (the documented stand-in for volume estimates).
// ---------------------------------------------------------------------------
enum class CommModel { Logical, Ring };

double comm_volume_bytes(const CollectiveLog& log, Index num_devices,
                         CommModel model, std::uint64_t bytes_per_element = 2);

}  // namespace deepfusion
