#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "deepfusion/fused.hpp"
#include "deepfusion/swiglu.hpp"
#include "deepfusion/tensor.hpp"

namespace deepfusion {

// ---------------------------------------------------------------------------
// Decoding-throughput harness: sweep batch sizes and decode-step counts,
// run variants under the scheduler, report mean ± std tokens/s and the
// per-token traffic model.
//
// "Output length" maps to sequential decode steps over MLP blocks only
// (prompt length 1, no attention/KV cache), so tokens/s here measures the
// MLP path in isolation; only speedup ratios between variants are meaningful.
// ---------------------------------------------------------------------------

enum class ReportFormat { Csv, Markdown };

struct BenchConfig {
  Index d_model = 512;
  Index d_ff = 2048;
  int num_layers = 4;
  std::vector<Index> batch_sizes{1, 2, 4, 8};
  std::vector<int> decode_steps{8};
  int repetitions = 4;
  std::vector<VariantTag> variants{VariantTag::FourKernel,
                                   VariantTag::TwoKernel, VariantTag::Fused};
  Index tp_devices = 1;
  std::uint64_t seed = 0;
  ReportFormat output_format = ReportFormat::Csv;
  std::filesystem::path cache_path;  // empty: tune in memory, no file
  std::string fingerprint;

  // Throws std::invalid_argument on empty lists or repetitions < 2
  // (std needs at least two samples).
  void validate() const;
};

struct ThroughputRow {
  Index batch = 0;
  int steps = 0;
  VariantTag variant = VariantTag::FourKernel;
  double mean_tokens_per_s = 0.0;
  double std_tokens_per_s = 0.0;  // population std over the repetitions
  double speedup_vs_baseline = 0.0;  // variant mean / four-kernel mean
  double traffic_bytes_per_token = 0.0;
};

// Refusal threshold for the weight/activation working set.
inline constexpr std::uint64_t kMaxBenchBytes = 4ull << 30;

std::uint64_t estimate_required_bytes(const BenchConfig& cfg);

// One row per (batch, steps, requested variant). The four-kernel baseline is
// measured even when not requested, for the speedup column. Throws
// std::runtime_error (with the byte estimate) when the working set would
// exceed kMaxBenchBytes.
std::vector<ThroughputRow> run_sweep(const BenchConfig& cfg);

// CSV: fixed column order, header row, '.' decimal, values at 17 significant
// digits. Markdown: one table per steps value, best mean per batch bolded.
std::string emit_report(const std::vector<ThroughputRow>& rows,
                        ReportFormat format);

// Inverse of the CSV emitter; throws std::runtime_error on malformed input.
std::vector<ThroughputRow> parse_csv_report(const std::string& text);

}  // namespace deepfusion
