#include "deepfusion/traffic.hpp"

#include <sstream>

#include "deepfusion/detail/cores.hpp"

namespace deepfusion {

TrafficReport& TrafficReport::add(const std::string& buffer,
                                  std::uint64_t reads, std::uint64_t writes) {
  auto& entry = per_buffer[buffer];
  entry.reads += reads;
  entry.writes += writes;
  return *this;
}

void TrafficReport::merge(const TrafficReport& other) {
  for (const auto& [name, counts] : other.per_buffer) {
    add(name, counts.reads, counts.writes);
  }
}

std::uint64_t TrafficReport::total_elements() const {
  std::uint64_t total = 0;
  for (const auto& [name, counts] : per_buffer) {
    total += counts.reads + counts.writes;
  }
  return total;
}

namespace {

void require_tile(VariantTag variant, const std::optional<TileConfig>& tile) {
  if (variant == VariantTag::Fused && !tile.has_value()) {
    throw std::invalid_argument(
        "traffic model: the Fused variant requires a tile config");
  }
}

}  // namespace

TrafficReport predict_stage1_traffic(VariantTag variant, const MlpShape& shape,
                                     const std::optional<TileConfig>& tile,
                                     std::uint64_t bytes_per_element) {
  shape.validate();
  require_tile(variant, tile);
  const auto b = static_cast<std::uint64_t>(shape.batch);
  const auto k = static_cast<std::uint64_t>(shape.d_model);
  const auto n = static_cast<std::uint64_t>(shape.d_ff);

  TrafficReport report;
  report.bytes_per_element = bytes_per_element;
  switch (variant) {
    case VariantTag::FourKernel:
      report.add(buffers::kX, 2 * b * k, 0)        // one pass per GEMM
          .add(buffers::kWGate, k * n, 0)
          .add(buffers::kWUp, k * n, 0)
          .add(buffers::kAGate, b * n, b * n)      // GEMM write, SiLU read
          .add(buffers::kA1, b * n, b * n)         // GEMM write, mul read
          .add(buffers::kASilu, b * n, b * n)      // SiLU write, mul read
          .add(buffers::kA2, 0, b * n);
      break;
    case VariantTag::TwoKernel:
      report.add(buffers::kX, b * k, 0)            // grouped GEMM, one pass
          .add(buffers::kWGate, k * n, 0)
          .add(buffers::kWUp, k * n, 0)
          .add(buffers::kGateUp, 2 * b * n, 2 * b * n)
          .add(buffers::kA2, 0, b * n);
      break;
    case VariantTag::Fused: {
      const ReuseCounts reuse = predicted_reuse_counts(shape, *tile);
      report.add(buffers::kX, reuse.x_reads, 0)
          .add(buffers::kWGate, reuse.weight_reads / 2, 0)
          .add(buffers::kWUp, reuse.weight_reads / 2, 0)
          .add(buffers::kA2, 0, reuse.a2_writes);
      break;
    }
  }
  return report;
}

TrafficReport predict_stage2_traffic(const MlpShape& shape,
                                     std::uint64_t bytes_per_element) {
  shape.validate();
  const auto b = static_cast<std::uint64_t>(shape.batch);
  const auto k = static_cast<std::uint64_t>(shape.d_model);
  const auto n = static_cast<std::uint64_t>(shape.d_ff);
  TrafficReport report;
  report.bytes_per_element = bytes_per_element;
  report.add(buffers::kA2, b * n, 0)
      .add(buffers::kWDown, n * k, 0)
      .add(buffers::kY, 0, b * k);
  return report;
}

TrafficReport predict_traffic(VariantTag variant, const MlpShape& shape,
                              const std::optional<TileConfig>& tile,
                              std::uint64_t bytes_per_element) {
  TrafficReport report =
      predict_stage1_traffic(variant, shape, tile, bytes_per_element);
  report.merge(predict_stage2_traffic(shape, bytes_per_element));
  return report;
}

std::string TrafficDiff::to_string() const {
  if (mismatches.empty()) return "traffic: predictions match instrumentation";
  std::ostringstream out;
  out << "traffic mismatches:";
  for (const auto& m : mismatches) {
    out << " [" << m.buffer << ": predicted r=" << m.predicted.reads
        << " w=" << m.predicted.writes << ", observed r=" << m.observed.reads
        << " w=" << m.observed.writes << "]";
  }
  return out.str();
}

TrafficDiff diff_against(const TrafficReport& predicted,
                         const std::map<std::string, AccessCounts>& observed) {
  TrafficDiff diff;
  for (const auto& [name, want] : predicted.per_buffer) {
    auto it = observed.find(name);
    const BufferTraffic got = it == observed.end()
                                  ? BufferTraffic{}
                                  : BufferTraffic{it->second.reads,
                                                  it->second.writes};
    if (got != want) diff.mismatches.push_back({name, want, got});
  }
  for (const auto& [name, got] : observed) {
    if (predicted.per_buffer.count(name) != 0) continue;
    diff.mismatches.push_back(
        {name, BufferTraffic{}, BufferTraffic{got.reads, got.writes}});
  }
  return diff;
}

TrafficDiff verify_against_instrumented(VariantTag variant,
                                        const MlpShape& shape,
                                        const std::optional<TileConfig>& tile,
                                        std::uint64_t seed) {
  require_tile(variant, tile);
  std::mt19937_64 rng(seed);
  Matrix x(shape.batch, shape.d_model);
  fill_uniform(x, rng);
  MlpWeights w = make_random_weights(shape, rng);

  AccessLedger ledger;
  bind_inputs(ledger, x, w);
  KernelConfig config{variant, tile.value_or(TileConfig{}), ""};
  (void)run_variant(config, x, w);

  return diff_against(predict_traffic(variant, shape, tile),
                      ledger.snapshot());
}

std::uint64_t stage1_flops(VariantTag variant, const MlpShape& shape,
                           const std::optional<TileConfig>& tile) {
  shape.validate();
  const auto b = static_cast<std::uint64_t>(shape.batch);
  const auto k = static_cast<std::uint64_t>(shape.d_model);
  const auto n = static_cast<std::uint64_t>(shape.d_ff);

  switch (variant) {
    case VariantTag::FourKernel:
      // Two GEMMs, then the pointwise bundle split across two launches.
      return 2 * (2 * b * k * n) + kSiluMulFlopsPerElement * b * n;
    case VariantTag::TwoKernel:
      // One grouped GEMM of width 2*d_ff, then the fused silu-mul kernel.
      return 2 * b * k * (2 * n) + kSiluMulFlopsPerElement * b * n;
    case VariantTag::Fused: {
      // Sum the clamped tile grid; every tile reduces over the full k extent
      // for both accumulators and runs the epilogue bundle once per element.
      require_tile(variant, tile);
      const TileConfig t = tile->clamped(shape);
      std::uint64_t flops = 0;
      for (Index i0 = 0; i0 < shape.batch; i0 += t.tile_m) {
        const auto bm = static_cast<std::uint64_t>(
            std::min(t.tile_m, shape.batch - i0));
        for (Index j0 = 0; j0 < shape.d_ff; j0 += t.tile_n) {
          const auto bn = static_cast<std::uint64_t>(
              std::min(t.tile_n, shape.d_ff - j0));
          flops += 2 * (2 * bm * bn * k);
          flops += kSiluMulFlopsPerElement * bm * bn;
        }
      }
      return flops;
    }
  }
  throw std::invalid_argument("stage1_flops: unknown variant");
}

double arithmetic_intensity(VariantTag variant, const MlpShape& shape,
                            const std::optional<TileConfig>& tile,
                            std::uint64_t bytes_per_element) {
  const std::uint64_t flops = stage1_flops(variant, shape, tile);
  const std::uint64_t bytes =
      predict_stage1_traffic(variant, shape, tile, bytes_per_element)
          .total_bytes();
  return static_cast<double>(flops) / static_cast<double>(bytes);
}

}  // namespace deepfusion
