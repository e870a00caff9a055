#include "deepfusion/bench.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <map>
#include <sstream>

#include "deepfusion/tp.hpp"
#include "deepfusion/traffic.hpp"
#include "deepfusion/tuner.hpp"

namespace deepfusion {

void BenchConfig::validate() const {
  MlpShape{1, d_model, d_ff}.validate();
  if (batch_sizes.empty() || decode_steps.empty() || variants.empty()) {
    throw std::invalid_argument(
        "bench: batch_sizes, decode_steps and variants must be non-empty");
  }
  if (repetitions < 2) {
    throw std::invalid_argument(
        "bench: repetitions must be >= 2 so std is defined");
  }
  if (num_layers < 1) {
    throw std::invalid_argument("bench: num_layers must be >= 1");
  }
  if (tp_devices < 1) {
    throw std::invalid_argument("bench: tp_devices must be >= 1");
  }
  for (Index b : batch_sizes) {
    if (b < 1) throw std::invalid_argument("bench: batch sizes must be >= 1");
  }
  for (int s : decode_steps) {
    if (s < 1) throw std::invalid_argument("bench: decode steps must be >= 1");
  }
}

std::uint64_t estimate_required_bytes(const BenchConfig& cfg) {
  const auto dm = static_cast<std::uint64_t>(cfg.d_model);
  const auto df = static_cast<std::uint64_t>(cfg.d_ff);
  const std::uint64_t max_batch = static_cast<std::uint64_t>(
      *std::max_element(cfg.batch_sizes.begin(), cfg.batch_sizes.end()));
  const std::uint64_t weights =
      static_cast<std::uint64_t>(cfg.num_layers) * (2 * dm * df + df * dm);
  // x, y, a2 plus the widest intermediate set (four-kernel: 4 x B*d_ff).
  const std::uint64_t activations = max_batch * (2 * dm + 5 * df);
  return (weights + activations) * sizeof(double);
}

namespace {

struct Stats {
  double mean = 0.0;
  double pop_std = 0.0;
};

Stats compute_stats(const std::vector<double>& samples) {
  Stats s;
  for (double v : samples) s.mean += v;
  s.mean /= static_cast<double>(samples.size());
  double sq = 0.0;
  for (double v : samples) sq += (v - s.mean) * (v - s.mean);
  s.pop_std = std::sqrt(sq / static_cast<double>(samples.size()));
  return s;
}

// Picks the fused tile for this shape: the scheduler's winner when it is a
// fused config, otherwise the fastest qualified fused result.
TileConfig fused_tile_from_entry(const ScheduleEntry& entry,
                                 const std::vector<KernelConfig>& candidates) {
  auto find_config = [&](const std::string& label) -> const KernelConfig* {
    for (const KernelConfig& c : candidates) {
      if (c.label == label) return &c;
    }
    return nullptr;
  };

  const BenchmarkResult* best = nullptr;
  for (const BenchmarkResult& r : entry.all_results) {
    if (r.disqualified || r.variant != VariantTag::Fused) continue;
    if (r.config_label == entry.chosen) {
      best = &r;
      break;
    }
    if (best == nullptr || r.median_ns < best->median_ns) best = &r;
  }
  if (best != nullptr) {
    if (const KernelConfig* c = find_config(best->config_label)) {
      return c->tile;
    }
  }
  // No qualified fused result; fall back to a single covering tile.
  return TileConfig{1 << 30, 1 << 30, 1 << 30, LoopOrder::ColumnMajorTiling};
}

double time_decode_seconds(const Matrix& x0,
                           const std::vector<MlpWeights>& layers, int steps,
                           const KernelConfig& config, Index tp_devices,
                           const ShardPlan* plan) {
  const auto t0 = std::chrono::steady_clock::now();
  Matrix x = x0;
  for (int s = 0; s < steps; ++s) {
    for (const MlpWeights& w : layers) {
      if (tp_devices > 1) {
        x = run_tp_mlp(x, w, *plan, config).output;
      } else {
        x = run_variant(config, x, w);
      }
    }
  }
  const auto t1 = std::chrono::steady_clock::now();
  return std::chrono::duration<double>(t1 - t0).count();
}

}  // namespace

std::vector<ThroughputRow> run_sweep(const BenchConfig& cfg) {
  cfg.validate();
  const std::uint64_t required = estimate_required_bytes(cfg);
  if (required > kMaxBenchBytes) {
    std::ostringstream msg;
    msg << "bench: shape needs about " << required
        << " bytes, above the " << kMaxBenchBytes << " byte limit";
    throw std::runtime_error(msg.str());
  }

  const bool wants_fused =
      std::find(cfg.variants.begin(), cfg.variants.end(), VariantTag::Fused) !=
      cfg.variants.end();
  const bool has_baseline =
      std::find(cfg.variants.begin(), cfg.variants.end(),
                VariantTag::FourKernel) != cfg.variants.end();

  std::vector<VariantTag> measured = cfg.variants;
  if (!has_baseline) measured.push_back(VariantTag::FourKernel);

  std::vector<ThroughputRow> rows;
  for (Index batch : cfg.batch_sizes) {
    const MlpShape shape{batch, cfg.d_model, cfg.d_ff};

    // Deterministic per-batch stream; weights scaled to keep activations O(1)
    // through deep step chains.
    std::mt19937_64 rng(cfg.seed ^
                        (0x9e3779b97f4a7c15ull * static_cast<std::uint64_t>(
                                                     batch + 1)));
    const double scale = 1.0 / std::sqrt(static_cast<double>(cfg.d_model));
    std::vector<MlpWeights> layers;
    layers.reserve(static_cast<std::size_t>(cfg.num_layers));
    for (int l = 0; l < cfg.num_layers; ++l) {
      layers.push_back(make_random_weights(shape, rng, scale));
    }
    Matrix x0(batch, cfg.d_model);
    fill_uniform(x0, rng);

    // Scheduler: consulted once per shape, cache-backed when a path is set.
    TileConfig fused_tile{shape.batch, shape.d_ff, shape.d_model,
                          LoopOrder::ColumnMajorTiling};
    if (wants_fused) {
      const std::vector<KernelConfig> candidates = default_candidates(shape);
      Tuner tuner({cfg.cache_path,
                   cfg.fingerprint.empty() ? default_fingerprint()
                                           : cfg.fingerprint,
                   ProfileOptions{1, std::max(3, cfg.repetitions), cfg.seed}});
      const ScheduleEntry entry = tuner.get_or_tune(shape, candidates);
      fused_tile = fused_tile_from_entry(entry, candidates);
    }

    ShardPlan plan;
    if (cfg.tp_devices > 1) plan = make_plan(cfg.d_ff, cfg.tp_devices);

    for (int steps : cfg.decode_steps) {
      std::map<VariantTag, Stats> stats;
      for (VariantTag variant : measured) {
        const KernelConfig config{variant, fused_tile,
                                  std::string(to_string(variant))};
        std::vector<double> tokens_per_s;
        tokens_per_s.reserve(static_cast<std::size_t>(cfg.repetitions));
        for (int rep = 0; rep < cfg.repetitions; ++rep) {
          const double seconds = time_decode_seconds(
              x0, layers, steps, config, cfg.tp_devices,
              cfg.tp_devices > 1 ? &plan : nullptr);
          tokens_per_s.push_back(static_cast<double>(batch) * steps / seconds);
        }
        stats[variant] = compute_stats(tokens_per_s);
      }

      const double baseline_mean = stats.at(VariantTag::FourKernel).mean;
      for (VariantTag variant : cfg.variants) {
        ThroughputRow row;
        row.batch = batch;
        row.steps = steps;
        row.variant = variant;
        row.mean_tokens_per_s = stats.at(variant).mean;
        row.std_tokens_per_s = stats.at(variant).pop_std;
        row.speedup_vs_baseline = stats.at(variant).mean / baseline_mean;
        // Traffic column: analytic per-block model. Fused is charged at its
        // canonical single covering tile; the layout's defining property is
        // the eliminated intermediates, not the tuned tile's re-reads.
        const std::optional<TileConfig> tile =
            variant == VariantTag::Fused
                ? std::optional<TileConfig>(TileConfig{
                      shape.batch, shape.d_ff, shape.d_model,
                      LoopOrder::ColumnMajorTiling})
                : std::nullopt;
        row.traffic_bytes_per_token =
            static_cast<double>(cfg.num_layers) *
            static_cast<double>(predict_traffic(variant, shape, tile)
                                    .total_bytes()) /
            static_cast<double>(batch);
        rows.push_back(row);
      }
    }
  }
  return rows;
}

// ---------------------------------------------------------------------------
// Reports.
// ---------------------------------------------------------------------------

namespace {

constexpr const char* kCsvHeader =
    "batch,steps,variant,mean_tokens_per_s,std_tokens_per_s,"
    "speedup_vs_baseline,traffic_bytes_per_token";

std::string format_double(double v) {
  char buf[40];
  std::snprintf(buf, sizeof(buf), "%.17g", v);
  return buf;
}

std::string emit_csv(const std::vector<ThroughputRow>& rows) {
  std::ostringstream out;
  out << kCsvHeader << "\n";
  for (const ThroughputRow& r : rows) {
    out << r.batch << ',' << r.steps << ',' << to_string(r.variant) << ','
        << format_double(r.mean_tokens_per_s) << ','
        << format_double(r.std_tokens_per_s) << ','
        << format_double(r.speedup_vs_baseline) << ','
        << format_double(r.traffic_bytes_per_token) << "\n";
  }
  return out.str();
}

std::string emit_markdown(const std::vector<ThroughputRow>& rows) {
  // Group rows by steps, preserving first-seen order.
  std::vector<int> steps_order;
  for (const ThroughputRow& r : rows) {
    if (std::find(steps_order.begin(), steps_order.end(), r.steps) ==
        steps_order.end()) {
      steps_order.push_back(r.steps);
    }
  }

  std::ostringstream out;
  for (int steps : steps_order) {
    out << "## steps = " << steps << "\n\n";
    out << "| batch | variant | tokens/s (mean ± std) | speedup vs "
           "four_kernel | traffic bytes/token |\n";
    out << "|------:|:--------|----------------------:|--------------------"
           "--:|--------------------:|\n";

    // Best mean per batch within this steps group.
    std::map<Index, double> best_mean;
    for (const ThroughputRow& r : rows) {
      if (r.steps != steps) continue;
      auto [it, inserted] = best_mean.try_emplace(r.batch, r.mean_tokens_per_s);
      if (!inserted) it->second = std::max(it->second, r.mean_tokens_per_s);
    }

    for (const ThroughputRow& r : rows) {
      if (r.steps != steps) continue;
      char cell[96];
      std::snprintf(cell, sizeof(cell), "%.2f ± %.2f", r.mean_tokens_per_s,
                    r.std_tokens_per_s);
      const bool best = r.mean_tokens_per_s == best_mean.at(r.batch);
      out << "| " << r.batch << " | " << to_string(r.variant) << " | ";
      if (best) {
        out << "**" << cell << "**";
      } else {
        out << cell;
      }
      char tail[64];
      std::snprintf(tail, sizeof(tail), " | %.3f | %.0f |\n",
                    r.speedup_vs_baseline, r.traffic_bytes_per_token);
      out << tail;
    }
    out << "\n";
  }
  return out.str();
}

std::vector<std::string> split(const std::string& line, char sep) {
  std::vector<std::string> fields;
  std::string field;
  std::istringstream in(line);
  while (std::getline(in, field, sep)) fields.push_back(field);
  return fields;
}

}  // namespace

std::string emit_report(const std::vector<ThroughputRow>& rows,
                        ReportFormat format) {
  if (rows.empty()) {
    throw std::invalid_argument("emit_report: no rows");
  }
  return format == ReportFormat::Csv ? emit_csv(rows) : emit_markdown(rows);
}

std::vector<ThroughputRow> parse_csv_report(const std::string& text) {
  std::istringstream in(text);
  std::string line;
  if (!std::getline(in, line) || line != kCsvHeader) {
    throw std::runtime_error("parse_csv_report: unexpected header: " + line);
  }
  std::vector<ThroughputRow> rows;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    const std::vector<std::string> fields = split(line, ',');
    if (fields.size() != 7) {
      throw std::runtime_error("parse_csv_report: bad field count in: " +
                               line);
    }
    ThroughputRow row;
    row.batch = std::stoll(fields[0]);
    row.steps = std::stoi(fields[1]);
    const auto variant = variant_from_string(fields[2]);
    if (!variant) {
      throw std::runtime_error("parse_csv_report: unknown variant: " +
                               fields[2]);
    }
    row.variant = *variant;
    row.mean_tokens_per_s = std::stod(fields[3]);
    row.std_tokens_per_s = std::stod(fields[4]);
    row.speedup_vs_baseline = std::stod(fields[5]);
    row.traffic_bytes_per_token = std::stod(fields[6]);
    rows.push_back(row);
  }
  return rows;
}

}  // namespace deepfusion
