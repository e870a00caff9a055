#include "deepfusion/tuner.hpp"

#include <sys/file.h>
#include <unistd.h>

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <ctime>
#include <fstream>
#include <set>
#include <sstream>

#include <json.hpp>

namespace deepfusion {

namespace {

using nlohmann::json;

int variant_preference(VariantTag v) {
  switch (v) {
    case VariantTag::Fused: return 0;
    case VariantTag::TwoKernel: return 1;
    case VariantTag::FourKernel: return 2;
  }
  return 3;
}

std::int64_t lower_median(std::vector<std::int64_t> samples) {
  std::sort(samples.begin(), samples.end());
  return samples[(samples.size() - 1) / 2];
}

double max_abs_diff(const Matrix& a, const Matrix& b) {
  double max_diff = 0.0;
  for (Index i = 0; i < a.rows(); ++i) {
    for (Index j = 0; j < a.cols(); ++j) {
      max_diff = std::max(max_diff, std::abs(a(i, j) - b(i, j)));
    }
  }
  return max_diff;
}

std::string now_iso8601() {
  const std::time_t now = std::chrono::system_clock::to_time_t(
      std::chrono::system_clock::now());
  std::tm tm_utc{};
  gmtime_r(&now, &tm_utc);
  char buf[32];
  std::strftime(buf, sizeof(buf), "%Y-%m-%dT%H:%M:%SZ", &tm_utc);
  return buf;
}

}  // namespace

std::vector<KernelConfig> default_candidates(const MlpShape& shape) {
  shape.validate();
  std::vector<KernelConfig> out;
  out.push_back({VariantTag::FourKernel, {}, "four_kernel"});
  out.push_back({VariantTag::TwoKernel, {}, "two_kernel"});

  const Index tile_m_opts[] = {1, shape.batch};
  const Index tile_n_opts[] = {32, 128, shape.d_ff};
  const Index tile_k_opts[] = {32, shape.d_model};
  const LoopOrder orders[] = {LoopOrder::RowMajorTiling,
                              LoopOrder::ColumnMajorTiling};

  std::set<std::tuple<Index, Index, Index, LoopOrder>> seen;
  for (Index tm : tile_m_opts) {
    for (Index tn : tile_n_opts) {
      for (Index tk : tile_k_opts) {
        for (LoopOrder order : orders) {
          const TileConfig tile =
              TileConfig{tm, tn, tk, order}.clamped(shape);
          if (!seen.insert({tile.tile_m, tile.tile_n, tile.tile_k, order})
                   .second) {
            continue;
          }
          out.push_back({VariantTag::Fused, tile, "fused_" + tile.describe()});
        }
      }
    }
  }
  return out;
}

CandidateRunner make_runner(const KernelConfig& config) {
  return {config, [config](const Matrix& x, const MlpWeights& w, Matrix& a2) {
            run_stage1(config.variant, x, w, a2, config.tile);
          }};
}

std::vector<CandidateRunner> make_runners(
    const std::vector<KernelConfig>& configs) {
  std::vector<CandidateRunner> runners;
  runners.reserve(configs.size());
  for (const KernelConfig& config : configs) {
    runners.push_back(make_runner(config));
  }
  return runners;
}

std::vector<BenchmarkResult> profile(const std::vector<CandidateRunner>& cands,
                                     const MlpShape& shape,
                                     const ProfileOptions& opts) {
  if (opts.warmup < 1) {
    throw std::invalid_argument("profile: warmup must be >= 1");
  }
  if (opts.runs < 3) {
    throw std::invalid_argument("profile: runs must be >= 3");
  }
  shape.validate();

  std::mt19937_64 rng(opts.seed);
  Matrix x(shape.batch, shape.d_model);
  fill_uniform(x, rng);
  MlpWeights w = make_random_weights(shape, rng);

  Matrix reference(shape.batch, shape.d_ff);
  run_four_kernel_stage1(x, w, reference);

  std::vector<BenchmarkResult> results;
  results.reserve(cands.size());
  for (const CandidateRunner& cand : cands) {
    BenchmarkResult result;
    result.config_label = cand.config.label;
    result.variant = cand.config.variant;
    result.warmup_runs = opts.warmup;

    Matrix a2(shape.batch, shape.d_ff);
    cand.stage1(x, w, a2);  // correctness gate, unmeasured
    const double deviation = max_abs_diff(a2, reference);
    if (deviation > kCorrectnessGateTolerance) {
      std::ostringstream reason;
      reason << "output deviates from four-kernel reference by " << deviation
             << " (gate " << kCorrectnessGateTolerance << ")";
      result.disqualified = reason.str();
      results.push_back(std::move(result));
      continue;
    }

    for (int i = 0; i < opts.warmup; ++i) {
      cand.stage1(x, w, a2);
    }
    result.samples_ns.reserve(static_cast<std::size_t>(opts.runs));
    for (int i = 0; i < opts.runs; ++i) {
      const auto t0 = std::chrono::steady_clock::now();
      cand.stage1(x, w, a2);
      const auto t1 = std::chrono::steady_clock::now();
      result.samples_ns.push_back(
          std::chrono::duration_cast<std::chrono::nanoseconds>(t1 - t0)
              .count());
    }
    result.measured_runs = opts.runs;
    result.median_ns = lower_median(result.samples_ns);
    results.push_back(std::move(result));
  }
  return results;
}

std::vector<BenchmarkResult> profile(const std::vector<KernelConfig>& configs,
                                     const MlpShape& shape,
                                     const ProfileOptions& opts) {
  return profile(make_runners(configs), shape, opts);
}

ScheduleEntry select(const MlpShape& shape, const std::string& fingerprint,
                     const std::vector<BenchmarkResult>& results) {
  const BenchmarkResult* best = nullptr;
  for (const BenchmarkResult& result : results) {
    if (result.disqualified.has_value()) continue;
    if (best == nullptr) {
      best = &result;
      continue;
    }
    const auto key = [](const BenchmarkResult& r) {
      return std::make_tuple(r.median_ns, variant_preference(r.variant),
                             r.config_label);
    };
    if (key(result) < key(*best)) best = &result;
  }
  if (best == nullptr) {
    throw std::runtime_error(
        "select: every candidate was disqualified by the correctness gate");
  }
  return {shape, fingerprint, best->config_label, results, now_iso8601()};
}

// ---------------------------------------------------------------------------
// Cache file.
// ---------------------------------------------------------------------------

namespace {

json to_json(const BenchmarkResult& r) {
  json j{{"label", r.config_label},
         {"variant", std::string(to_string(r.variant))},
         {"samples_ns", r.samples_ns},
         {"median_ns", r.median_ns},
         {"warmup_runs", r.warmup_runs},
         {"measured_runs", r.measured_runs}};
  if (r.disqualified) j["disqualified"] = *r.disqualified;
  return j;
}

json to_json(const ScheduleEntry& e) {
  json results = json::array();
  for (const BenchmarkResult& r : e.all_results) results.push_back(to_json(r));
  return json{{"shape",
               {{"batch", e.shape.batch},
                {"d_model", e.shape.d_model},
                {"d_ff", e.shape.d_ff}}},
              {"fingerprint", e.fingerprint},
              {"chosen", e.chosen},
              {"created_at", e.created_at},
              {"results", results}};
}

template <typename T>
T get_field(const json& j, const char* field) {
  if (!j.contains(field)) {
    throw CacheError(std::string("cache entry missing field '") + field + "'");
  }
  try {
    return j.at(field).get<T>();
  } catch (const json::exception& e) {
    throw CacheError(std::string("cache field '") + field +
                     "' has the wrong type: " + e.what());
  }
}

BenchmarkResult result_from_json(const json& j) {
  BenchmarkResult r;
  r.config_label = get_field<std::string>(j, "label");
  const auto variant = variant_from_string(get_field<std::string>(j, "variant"));
  if (!variant) {
    throw CacheError("cache field 'variant' holds an unknown variant name");
  }
  r.variant = *variant;
  r.samples_ns = get_field<std::vector<std::int64_t>>(j, "samples_ns");
  r.median_ns = get_field<std::int64_t>(j, "median_ns");
  r.warmup_runs = get_field<int>(j, "warmup_runs");
  r.measured_runs = get_field<int>(j, "measured_runs");
  if (j.contains("disqualified")) {
    r.disqualified = get_field<std::string>(j, "disqualified");
  }
  return r;
}

ScheduleEntry entry_from_json(const json& j) {
  ScheduleEntry e;
  const json shape = get_field<json>(j, "shape");
  e.shape.batch = get_field<Index>(shape, "batch");
  e.shape.d_model = get_field<Index>(shape, "d_model");
  e.shape.d_ff = get_field<Index>(shape, "d_ff");
  e.fingerprint = get_field<std::string>(j, "fingerprint");
  e.chosen = get_field<std::string>(j, "chosen");
  e.created_at = get_field<std::string>(j, "created_at");
  for (const json& r : get_field<json>(j, "results")) {
    e.all_results.push_back(result_from_json(r));
  }
  return e;
}

// Stream plus flock, released together: closing the stream drops the lock,
// so no unlock can ever land on a recycled descriptor.
class LockedFile {
 public:
  LockedFile(const std::filesystem::path& path, const char* mode,
             int lock_operation)
      : file_(std::fopen(path.c_str(), mode)) {
    if (file_ != nullptr) flock(fileno(file_), lock_operation);
  }
  ~LockedFile() {
    if (file_ != nullptr) std::fclose(file_);
  }
  LockedFile(const LockedFile&) = delete;
  LockedFile& operator=(const LockedFile&) = delete;

  std::FILE* get() const { return file_; }
  explicit operator bool() const { return file_ != nullptr; }

 private:
  std::FILE* file_;
};

std::string read_all(std::FILE* f) {
  std::string text;
  char buf[4096];
  std::size_t got = 0;
  std::fseek(f, 0, SEEK_SET);
  while ((got = std::fread(buf, 1, sizeof(buf), f)) > 0) {
    text.append(buf, got);
  }
  return text;
}

json parse_cache_json(const std::string& text,
                      const std::filesystem::path& path) {
  json doc;
  try {
    doc = json::parse(text);
  } catch (const json::parse_error& e) {
    throw CacheError("cache file " + path.string() +
                     " is corrupt: " + e.what());
  }
  const int version = get_field<int>(doc, "format_version");
  if (version != kCacheFormatVersion) {
    std::ostringstream msg;
    msg << "cache file " << path.string() << " has format version " << version
        << "; this build reads version " << kCacheFormatVersion;
    throw CacheError(msg.str());
  }
  return doc;
}

bool key_matches(const json& entry, const MlpShape& shape,
                 const std::string& fingerprint) {
  const json s = get_field<json>(entry, "shape");
  return get_field<Index>(s, "batch") == shape.batch &&
         get_field<Index>(s, "d_model") == shape.d_model &&
         get_field<Index>(s, "d_ff") == shape.d_ff &&
         get_field<std::string>(entry, "fingerprint") == fingerprint;
}

}  // namespace

void cache_store(const ScheduleEntry& entry,
                 const std::filesystem::path& path) {
  if (path.has_parent_path()) {
    std::filesystem::create_directories(path.parent_path());
  }
  LockedFile file(path, "a+", LOCK_EX);
  if (!file) {
    throw CacheError("cache file " + path.string() + " is not writable");
  }
  const std::string text = read_all(file.get());

  json doc;
  if (text.empty()) {
    doc = json{{"format_version", kCacheFormatVersion},
               {"entries", json::array()}};
  } else {
    doc = parse_cache_json(text, path);
  }

  json& entries = doc["entries"];
  bool replaced = false;
  for (json& existing : entries) {
    if (key_matches(existing, entry.shape, entry.fingerprint)) {
      existing = to_json(entry);
      replaced = true;
      break;
    }
  }
  if (!replaced) entries.push_back(to_json(entry));

  const std::string out = doc.dump(2) + "\n";
  std::fseek(file.get(), 0, SEEK_SET);
  if (ftruncate(fileno(file.get()), 0) != 0) {
    throw CacheError("cache file " + path.string() + ": truncate failed");
  }
  if (std::fwrite(out.data(), 1, out.size(), file.get()) != out.size() ||
      std::fflush(file.get()) != 0) {
    throw CacheError("cache file " + path.string() + ": write failed");
  }
}

std::optional<ScheduleEntry> cache_lookup(const MlpShape& shape,
                                          const std::string& fingerprint,
                                          const std::filesystem::path& path) {
  std::string text;
  {
    LockedFile file(path, "r", LOCK_SH);
    if (!file) return std::nullopt;  // absent file is a miss
    text = read_all(file.get());
  }
  if (text.empty()) return std::nullopt;

  const json doc = parse_cache_json(text, path);
  for (const json& entry : get_field<json>(doc, "entries")) {
    if (key_matches(entry, shape, fingerprint)) {
      return entry_from_json(entry);
    }
  }
  return std::nullopt;
}

std::string default_fingerprint() {
  std::ifstream cpuinfo("/proc/cpuinfo");
  std::string line;
  while (std::getline(cpuinfo, line)) {
    if (line.rfind("model name", 0) == 0) {
      const auto colon = line.find(':');
      if (colon != std::string::npos) {
        std::string name = line.substr(colon + 1);
        const auto start = name.find_first_not_of(' ');
        return start == std::string::npos ? "unknown-cpu" : name.substr(start);
      }
    }
  }
  return "unknown-cpu";
}

ScheduleEntry Tuner::get_or_tune(const MlpShape& shape,
                                 const std::vector<KernelConfig>& candidates) {
  if (!opts_.cache_path.empty()) {
    if (auto hit = cache_lookup(shape, opts_.fingerprint, opts_.cache_path)) {
      last_was_cache_hit_ = true;
      return *hit;
    }
  }
  last_was_cache_hit_ = false;
  ++profile_invocations_;
  const auto results = profile(candidates, shape, opts_.profile);
  ScheduleEntry entry = select(shape, opts_.fingerprint, results);
  if (!opts_.cache_path.empty()) {
    cache_store(entry, opts_.cache_path);
  }
  return entry;
}

}  // namespace deepfusion
