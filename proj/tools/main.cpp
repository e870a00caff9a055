#include <cstdlib>
#include <fstream>
#include <iostream>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "deepfusion/bench.hpp"
#include "deepfusion/tp.hpp"
#include "deepfusion/traffic.hpp"
#include "deepfusion/tuner.hpp"
#include "deepfusion/verification.hpp"

namespace {

using namespace deepfusion;

constexpr int kExitOk = 0;
constexpr int kExitInvariantFailure = 1;
constexpr int kExitUsage = 2;

std::vector<Index> parse_index_list(const std::string& text,
                                    const char* flag) {
  std::vector<Index> out;
  std::istringstream in(text);
  std::string item;
  while (std::getline(in, item, ',')) {
    try {
      out.push_back(std::stoll(item));
    } catch (const std::exception&) {
      throw CLI::ValidationError(flag, "expected a comma-separated int list");
    }
  }
  if (out.empty()) {
    throw CLI::ValidationError(flag, "expected a non-empty list");
  }
  return out;
}

std::vector<VariantTag> parse_variants(const std::string& text) {
  std::vector<VariantTag> out;
  std::istringstream in(text);
  std::string item;
  while (std::getline(in, item, ',')) {
    const auto variant = variant_from_string(item);
    if (!variant) {
      throw CLI::ValidationError(
          "--variants", "unknown variant '" + item +
                            "' (expected four_kernel, two_kernel, fused)");
    }
    out.push_back(*variant);
  }
  if (out.empty()) {
    throw CLI::ValidationError("--variants", "expected a non-empty list");
  }
  return out;
}

std::filesystem::path resolve_cache_path(const std::string& flag_value) {
  if (!flag_value.empty()) return flag_value;
  if (const char* env = std::getenv(kCacheEnvVar)) return env;
  return "deepfusion_cache.json";
}

void write_output(const std::string& text, const std::string& out_path) {
  if (out_path.empty()) {
    std::cout << text;
    return;
  }
  std::ofstream out(out_path);
  if (!out) {
    throw std::runtime_error("cannot open output file " + out_path);
  }
  out << text;
  std::cout << "wrote " << out_path << "\n";
}

// Shared shape/sweep flags.
struct CommonArgs {
  Index d_model = 512;
  Index d_ff = 2048;
  int layers = 4;
  std::string batch = "1,2,4,8";
  std::string steps = "8";
  int reps = 4;
  std::string variants = "four_kernel,two_kernel,fused";
  Index tp = 1;
  std::uint64_t seed = 0;
  std::string format = "csv";
  std::string cache_path;
  std::string out_path;
  std::string fingerprint;
};

void add_shape_flags(CLI::App* cmd, CommonArgs& args) {
  cmd->add_option("--d-model", args.d_model, "Model width");
  cmd->add_option("--d-ff", args.d_ff, "Feed-forward width");
  cmd->add_option("--seed", args.seed, "RNG seed");
}

void warn_on_unusual_ratio(const CommonArgs& args) {
  const MlpShape probe{1, args.d_model, args.d_ff};
  if (!probe.ff_ratio_typical()) {
    std::cerr << "note: d_ff/d_model = "
              << static_cast<double>(args.d_ff) / args.d_model
              << " is outside the usual [3.5, 4.0] band\n";
  }
}

int run_bench(const CommonArgs& args) {
  warn_on_unusual_ratio(args);
  BenchConfig cfg;
  cfg.d_model = args.d_model;
  cfg.d_ff = args.d_ff;
  cfg.num_layers = args.layers;
  cfg.batch_sizes = parse_index_list(args.batch, "--batch");
  cfg.decode_steps.clear();
  for (Index s : parse_index_list(args.steps, "--steps")) {
    cfg.decode_steps.push_back(static_cast<int>(s));
  }
  cfg.repetitions = args.reps;
  cfg.variants = parse_variants(args.variants);
  cfg.tp_devices = args.tp;
  cfg.seed = args.seed;
  cfg.output_format =
      args.format == "markdown" ? ReportFormat::Markdown : ReportFormat::Csv;
  cfg.cache_path = resolve_cache_path(args.cache_path);
  cfg.fingerprint = args.fingerprint;

  const std::vector<ThroughputRow> rows = run_sweep(cfg);
  write_output(emit_report(rows, cfg.output_format), args.out_path);
  return kExitOk;
}

int run_traffic(const CommonArgs& args) {
  const std::vector<Index> batches = parse_index_list(args.batch, "--batch");
  const std::vector<VariantTag> variants = parse_variants(args.variants);
  const bool markdown = args.format == "markdown";

  std::ostringstream out;
  if (markdown) {
    out << "| batch | variant | stage1 elems | stage2 elems | total bytes | "
           "flops | flops/byte |\n";
    out << "|------:|:--------|-------------:|-------------:|------------:|"
           "------:|-----------:|\n";
  } else {
    out << "batch,variant,stage1_elements,stage2_elements,total_bytes,flops,"
           "arithmetic_intensity\n";
  }
  for (Index batch : batches) {
    const MlpShape shape{batch, args.d_model, args.d_ff};
    const std::optional<TileConfig> single{
        TileConfig{shape.batch, shape.d_ff, shape.d_model,
                   LoopOrder::ColumnMajorTiling}};
    for (VariantTag variant : variants) {
      const auto tile =
          variant == VariantTag::Fused ? single : std::optional<TileConfig>{};
      const auto s1 = predict_stage1_traffic(variant, shape, tile);
      const auto s2 = predict_stage2_traffic(shape);
      const auto full = predict_traffic(variant, shape, tile);
      const auto flops = stage1_flops(variant, shape, tile);
      const double intensity = arithmetic_intensity(variant, shape, tile);
      if (markdown) {
        out << "| " << batch << " | " << to_string(variant) << " | "
            << s1.total_elements() << " | " << s2.total_elements() << " | "
            << full.total_bytes() << " | " << flops << " | " << intensity
            << " |\n";
      } else {
        out << batch << ',' << to_string(variant) << ','
            << s1.total_elements() << ',' << s2.total_elements() << ','
            << full.total_bytes() << ',' << flops << ',' << intensity << "\n";
      }
    }
  }
  write_output(out.str(), args.out_path);
  return kExitOk;
}

int run_tune(const CommonArgs& args, int warmup, int runs) {
  warn_on_unusual_ratio(args);
  const std::filesystem::path cache = resolve_cache_path(args.cache_path);
  const std::string fingerprint =
      args.fingerprint.empty() ? default_fingerprint() : args.fingerprint;

  for (Index batch : parse_index_list(args.batch, "--batch")) {
    const MlpShape shape{batch, args.d_model, args.d_ff};
    Tuner tuner({cache, fingerprint,
                 ProfileOptions{warmup, runs, args.seed}});
    const ScheduleEntry entry =
        tuner.get_or_tune(shape, default_candidates(shape));
    std::cout << to_string(shape) << " -> " << entry.chosen
              << (tuner.last_was_cache_hit() ? " (cache hit, profiling skipped)"
                                             : " (profiled)")
              << "\n";
    int disqualified = 0;
    for (const BenchmarkResult& r : entry.all_results) {
      if (r.disqualified) ++disqualified;
    }
    if (disqualified > 0) {
      std::cout << "  " << disqualified
                << " candidate(s) disqualified by the correctness gate\n";
    }
  }
  std::cout << "cache: " << cache.string() << " [" << fingerprint << "]\n";
  return kExitOk;
}

int run_tp_check(const CommonArgs& args) {
  const std::vector<Index> batches = parse_index_list(args.batch, "--batch");
  const std::vector<VariantTag> variants = parse_variants(args.variants);
  std::vector<Index> devices{1, 2, 3, 4, 8};
  if (args.tp > 1) devices = {args.tp};

  bool ok = true;
  for (Index batch : batches) {
    const MlpShape shape{batch, args.d_model, args.d_ff};
    std::mt19937_64 rng(args.seed);
    Matrix x(shape.batch, shape.d_model);
    fill_uniform(x, rng);
    const MlpWeights w = make_random_weights(shape, rng);
    const Matrix expected = run_four_kernel(x, w);

    for (Index p : devices) {
      if (p > shape.d_ff) {
        std::cout << "P=" << p << ": skipped (P > d_ff)\n";
        continue;
      }
      const ShardPlan plan = make_plan(shape.d_ff, p);
      for (VariantTag variant : variants) {
        const KernelConfig config{
            variant,
            TileConfig{shape.batch, shape.d_ff, shape.d_model,
                       LoopOrder::ColumnMajorTiling},
            std::string(to_string(variant))};
        const TpResult result = run_tp_mlp(x, w, plan, config);
        const double dev =
            verification::max_abs_diff(result.output, expected);
        const auto& events = result.log.events;
        const bool contract =
            dev <= 1e-10 && events.size() == 1 &&
            events[0].kind == CollectiveKind::AllReduce &&
            events[0].payload_elements_per_device ==
                static_cast<std::uint64_t>(shape.batch * shape.d_model);
        ok = ok && contract;
        std::cout << to_string(shape) << " P=" << p << " "
                  << to_string(variant) << ": max|dev|=" << dev
                  << ", collectives=" << events.size() << ", ring bytes="
                  << comm_volume_bytes(result.log, p, CommModel::Ring)
                  << (contract ? " [ok]" : " [FAIL]") << "\n";
      }
    }

    const Index naive_p = std::min<Index>(4, shape.d_ff);
    const TpResult naive = run_naive_tp_mlp(
        x, w, make_plan(shape.d_ff, naive_p,
                        ShardScheme::NaivePerGemmAllGather));
    std::cout << to_string(shape) << " naive per-GEMM P=" << naive_p << ": "
              << naive.log.events.size() << " collectives (compound uses 1)\n";
    ok = ok && naive.log.events.size() >= 2;
  }
  return ok ? kExitOk : kExitInvariantFailure;
}

int run_verify(const std::string& mutant_name, bool skip_timing,
               std::uint64_t seed) {
  verification::Options opts;
  const auto mutant = verification::mutant_from_string(mutant_name);
  if (!mutant) {
    std::cerr << "unknown mutant '" << mutant_name
              << "' (expected none, silu-per-k-chunk, "
                 "materialize-intermediate)\n";
    return kExitUsage;
  }
  opts.mutant = *mutant;
  opts.include_timing = !skip_timing;
  if (seed != 0) opts.seed = seed;
  if (opts.mutant != verification::Mutant::None) {
    std::cout << "running with injected mutant: " << mutant_name << "\n";
  }

  const auto results = verification::run_all(opts);
  int failed = 0;
  for (const auto& r : results) {
    const char* status = r.passed ? "[PASS]" : (r.soft ? "[WARN]" : "[FAIL]");
    if (!r.passed && !r.soft) ++failed;
    std::cout << status << " " << r.name << " — " << r.detail << "\n";
  }
  std::cout << (failed == 0 ? "verify: all hard checks passed\n"
                            : "verify: FAILURES present\n");
  return failed == 0 ? kExitOk : kExitInvariantFailure;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{
      "SwiGLU MLP fusion workbench: instrumented executors, traffic model, "
      "TP simulator, kernel scheduler"};
  app.require_subcommand(1);
  app.failure_message(CLI::FailureMessage::help);

  CommonArgs args;

  CLI::App* bench = app.add_subcommand("bench", "Throughput sweep");
  add_shape_flags(bench, args);
  bench->add_option("--layers", args.layers, "MLP blocks per forward pass");
  bench->add_option("--batch", args.batch, "Comma-separated batch sizes");
  bench->add_option("--steps", args.steps, "Comma-separated decode steps");
  bench->add_option("--reps", args.reps, "Repetitions per configuration");
  bench->add_option("--variants", args.variants, "Comma-separated variants");
  bench->add_option("--tp", args.tp, "Simulated tensor-parallel devices");
  bench->add_option("--format", args.format, "csv or markdown")
      ->check(CLI::IsMember({"csv", "markdown"}));
  bench->add_option("--cache-path", args.cache_path,
                    "Tuning cache file (env DEEPFUSION_CACHE)");
  bench->add_option("--out", args.out_path, "Write the report to a file");
  bench->add_option("--fingerprint", args.fingerprint,
                    "Hardware fingerprint override");

  CLI::App* traffic = app.add_subcommand("traffic", "Analytic traffic table");
  add_shape_flags(traffic, args);
  traffic->add_option("--batch", args.batch, "Comma-separated batch sizes");
  traffic->add_option("--variants", args.variants, "Comma-separated variants");
  traffic->add_option("--format", args.format, "csv or markdown")
      ->check(CLI::IsMember({"csv", "markdown"}));
  traffic->add_option("--out", args.out_path, "Write the report to a file");

  int tune_warmup = 1;
  int tune_runs = 4;
  CLI::App* tune = app.add_subcommand("tune", "Profile candidates and cache "
                                              "the fastest");
  add_shape_flags(tune, args);
  tune->add_option("--batch", args.batch, "Comma-separated batch sizes");
  tune->add_option("--warmup", tune_warmup, "Warmup runs per candidate");
  tune->add_option("--runs", tune_runs, "Measured runs per candidate");
  tune->add_option("--cache-path", args.cache_path,
                   "Tuning cache file (env DEEPFUSION_CACHE)");
  tune->add_option("--fingerprint", args.fingerprint,
                   "Hardware fingerprint override");

  CLI::App* tp_check =
      app.add_subcommand("tp-check", "Tensor-parallel equivalence report");
  add_shape_flags(tp_check, args);
  tp_check->add_option("--batch", args.batch, "Comma-separated batch sizes");
  tp_check->add_option("--variants", args.variants,
                       "Comma-separated variants");
  tp_check->add_option("--tp", args.tp, "Check a single device count");

  std::string mutant_name = "none";
  bool skip_timing = false;
  std::uint64_t verify_seed = 0;
  CLI::App* verify = app.add_subcommand("verify", "Run the invariant suite");
  verify->add_option("--mutant", mutant_name,
                     "Inject a negative-control mutant (silu-per-k-chunk, "
                     "materialize-intermediate)");
  verify->add_flag("--skip-timing", skip_timing,
                   "Skip the machine-dependent timing check");
  verify->add_option("--seed", verify_seed, "RNG seed override");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    app.exit(e);  // prints help or error
    return e.get_exit_code() == 0 ? kExitOk : kExitUsage;
  }

  try {
    if (bench->parsed()) return run_bench(args);
    if (traffic->parsed()) return run_traffic(args);
    if (tune->parsed()) return run_tune(args, tune_warmup, tune_runs);
    if (tp_check->parsed()) return run_tp_check(args);
    if (verify->parsed())
      return run_verify(mutant_name, skip_timing, verify_seed);
  } catch (const CLI::ValidationError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitUsage;
  } catch (const ShapeError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitUsage;
  } catch (const std::invalid_argument& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitUsage;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitInvariantFailure;
  }
  return kExitUsage;
}
