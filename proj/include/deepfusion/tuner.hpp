#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <optional>
#include <string>
#include <vector>

#include "deepfusion/fused.hpp"
#include "deepfusion/swiglu.hpp"
#include "deepfusion/tensor.hpp"

namespace deepfusion {

// ---------------------------------------------------------------------------
// Profile-driven kernel scheduler: benchmark a candidate set on the target
// shape before inference, select the fastest, persist the decision keyed by
// (shape, hardware fingerprint).
//
// Profiling times stage 1 only — the down projection is shared verbatim by
// all variants. Every candidate passes a correctness gate against the
// four-kernel stage-1 reference (1e-10 max abs) or is disqualified.
// ---------------------------------------------------------------------------

inline constexpr double kCorrectnessGateTolerance = 1e-10;

struct BenchmarkResult {
  std::string config_label;
  VariantTag variant = VariantTag::Fused;
  std::vector<std::int64_t> samples_ns;
  std::int64_t median_ns = 0;  // exact lower median of samples_ns
  int warmup_runs = 0;
  int measured_runs = 0;
  // Set when the candidate failed the correctness gate; excluded from
  // selection.
  std::optional<std::string> disqualified;

  bool operator==(const BenchmarkResult&) const = default;
};

struct ScheduleEntry {
  MlpShape shape;
  std::string fingerprint;
  std::string chosen;  // label of the selected candidate
  std::vector<BenchmarkResult> all_results;
  std::string created_at;  // ISO-8601 UTC

  bool operator==(const ScheduleEntry&) const = default;
};

// FourKernel, TwoKernel, and a fused tile grid
// {tile_m in {1, B}} x {tile_n in {32, 128, d_ff}} x {tile_k in {32, d_model}}
// x both loop orders, deduplicated after clamping. Labels are unique.
std::vector<KernelConfig> default_candidates(const MlpShape& shape);

// A profiled candidate: its config plus the stage-1 callable the profiler
// times. Tests may rig the callable (injected latency, corrupted output).
struct CandidateRunner {
  KernelConfig config;
  std::function<void(const Matrix&, const MlpWeights&, Matrix&)> stage1;
};

CandidateRunner make_runner(const KernelConfig& config);
std::vector<CandidateRunner> make_runners(
    const std::vector<KernelConfig>& configs);

struct ProfileOptions {
  int warmup = 1;           // >= 1
  int runs = 4;             // >= 3; default mirrors the measurement protocol
  std::uint64_t seed = 0;   // fixed random data, identical across candidates
};

// Runs candidates strictly sequentially on seeded data: one unmeasured
// correctness-gate run, `warmup` unmeasured runs, then `runs` measured runs.
std::vector<BenchmarkResult> profile(const std::vector<CandidateRunner>& cands,
                                     const MlpShape& shape,
                                     const ProfileOptions& opts);
std::vector<BenchmarkResult> profile(const std::vector<KernelConfig>& configs,
                                     const MlpShape& shape,
                                     const ProfileOptions& opts);

// Deterministic argmin of median_ns over qualified results; ties prefer
// deeper fusion (Fused > TwoKernel > FourKernel), then lexicographic label.
// Throws std::runtime_error when every candidate is disqualified.
ScheduleEntry select(const MlpShape& shape, const std::string& fingerprint,
                     const std::vector<BenchmarkResult>& results);

// ---------------------------------------------------------------------------
// Tuning cache: one human-readable versioned file, one entry per
// (shape, fingerprint). Writes take an exclusive lock; reads a shared one.
// ---------------------------------------------------------------------------

inline constexpr int kCacheFormatVersion = 1;
inline constexpr const char* kCacheEnvVar = "DEEPFUSION_CACHE";

struct CacheError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// Inserts or replaces the entry for (entry.shape, entry.fingerprint).
void cache_store(const ScheduleEntry& entry,
                 const std::filesystem::path& path);

// Returns the stored entry, or nullopt when the file or key is absent.
// Throws CacheError on corrupt files or unknown future format versions.
std::optional<ScheduleEntry> cache_lookup(const MlpShape& shape,
                                          const std::string& fingerprint,
                                          const std::filesystem::path& path);

// Free-text environment descriptor (CPU model when available).
std::string default_fingerprint();

// ---------------------------------------------------------------------------
// Front door: look up the cache, profile + select + store on a miss.
// ---------------------------------------------------------------------------
class Tuner {
 public:
  struct Options {
    std::filesystem::path cache_path;  // empty disables the cache
    std::string fingerprint;
    ProfileOptions profile;
  };

  explicit Tuner(Options opts) : opts_(std::move(opts)) {}

  ScheduleEntry get_or_tune(const MlpShape& shape,
                            const std::vector<KernelConfig>& candidates);

  int profile_invocations() const { return profile_invocations_; }
  bool last_was_cache_hit() const { return last_was_cache_hit_; }

 private:
  Options opts_;
  int profile_invocations_ = 0;
  bool last_was_cache_hit_ = false;
};

}  // namespace deepfusion
