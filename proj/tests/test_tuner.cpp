#include <doctest.h>

#include <chrono>
#include <cstdio>
#include <filesystem>
#include <set>
#include <thread>

#include "deepfusion/tuner.hpp"

using namespace deepfusion;

namespace {

std::filesystem::path temp_path(const char* tag) {
  static int counter = 0;
  return std::filesystem::temp_directory_path() /
         ("deepfusion_test_" + std::to_string(::getpid()) + "_" + tag + "_" +
          std::to_string(counter++) + ".json");
}

struct ScopedFile {
  std::filesystem::path path;
  explicit ScopedFile(std::filesystem::path p) : path(std::move(p)) {}
  ~ScopedFile() {
    std::error_code ec;
    std::filesystem::remove(path, ec);
  }
};

BenchmarkResult qualified(const char* label, VariantTag variant,
                          std::vector<std::int64_t> samples) {
  BenchmarkResult r;
  r.config_label = label;
  r.variant = variant;
  r.samples_ns = std::move(samples);
  std::vector<std::int64_t> sorted = r.samples_ns;
  std::sort(sorted.begin(), sorted.end());
  r.median_ns = sorted[(sorted.size() - 1) / 2];
  r.warmup_runs = 1;
  r.measured_runs = static_cast<int>(r.samples_ns.size());
  return r;
}

}  // namespace

TEST_CASE("default candidate grid: tiny shapes keep all three variants") {
  const auto tiny = default_candidates({1, 4, 8});
  CHECK(tiny.size() >= 3);
  std::set<VariantTag> variants;
  std::set<std::string> labels;
  for (const KernelConfig& c : tiny) {
    variants.insert(c.variant);
    CHECK(labels.insert(c.label).second);  // unique labels
  }
  CHECK(variants.size() == 3);

  const auto large = default_candidates({16, 1024, 4096});
  CHECK(large.size() >= 14);
  // Full grid: 2 tile_m x 3 tile_n x 2 tile_k x 2 orders + 2 references.
  CHECK(large.size() == 26);
}

TEST_CASE("profile measures and gates candidates") {
  const MlpShape shape{2, 4, 8};
  const auto results =
      profile(default_candidates(shape), shape, ProfileOptions{1, 3, 5});
  CHECK(results.size() == default_candidates(shape).size());
  for (const BenchmarkResult& r : results) {
    REQUIRE_FALSE(r.disqualified.has_value());
    CHECK(r.measured_runs == 3);
    CHECK(r.samples_ns.size() == 3);
    std::vector<std::int64_t> sorted = r.samples_ns;
    std::sort(sorted.begin(), sorted.end());
    CHECK(r.median_ns == sorted[1]);  // lower median
  }
  CHECK_THROWS_AS(profile(default_candidates(shape), shape,
                          ProfileOptions{0, 3, 5}),
                  std::invalid_argument);
  CHECK_THROWS_AS(profile(default_candidates(shape), shape,
                          ProfileOptions{1, 2, 5}),
                  std::invalid_argument);
}

TEST_CASE("rigged candidates: slow never chosen, corrupt disqualified") {
  const MlpShape shape{2, 8, 16};
  const CandidateRunner honest = make_runner(
      {VariantTag::Fused,
       TileConfig{2, 16, 8, LoopOrder::ColumnMajorTiling}, "fused_honest"});

  CandidateRunner slow = honest;
  slow.config.label = "fused_slow";
  slow.stage1 = [inner = honest.stage1](const Matrix& x, const MlpWeights& w,
                                        Matrix& a2) {
    std::this_thread::sleep_for(std::chrono::milliseconds(10));
    inner(x, w, a2);
  };

  CandidateRunner corrupt = honest;
  corrupt.config.label = "fused_corrupt";
  corrupt.stage1 = [inner = honest.stage1](const Matrix& x,
                                           const MlpWeights& w, Matrix& a2) {
    inner(x, w, a2);
    a2(0, 0) += 1e-3;
  };

  for (int trial = 0; trial < 5; ++trial) {
    const auto results =
        profile({honest, slow, corrupt}, shape,
                ProfileOptions{1, 3, 100 + static_cast<std::uint64_t>(trial)});
    const ScheduleEntry entry = select(shape, "test", results);
    CHECK(entry.chosen == "fused_honest");
    for (const BenchmarkResult& r : results) {
      if (r.config_label == "fused_corrupt") {
        REQUIRE(r.disqualified.has_value());
        CHECK(r.disqualified->find("deviates") != std::string::npos);
      } else {
        CHECK_FALSE(r.disqualified.has_value());
      }
    }
  }
}

TEST_CASE("select: tie-breaks and failure modes") {
  const MlpShape shape{1, 2, 3};

  // Single candidate: chosen trivially.
  const auto only = select(shape, "fp", {qualified("a", VariantTag::Fused,
                                                   {10, 10, 10})});
  CHECK(only.chosen == "a");

  // Equal medians: deeper fusion wins.
  const auto fusion_tie =
      select(shape, "fp",
             {qualified("two_kernel", VariantTag::TwoKernel, {10, 10, 10}),
              qualified("fused_x", VariantTag::Fused, {10, 10, 10})});
  CHECK(fusion_tie.chosen == "fused_x");

  // Same variant, equal medians: lexicographic label.
  const auto label_tie =
      select(shape, "fp",
             {qualified("fused_b", VariantTag::Fused, {10, 10, 10}),
              qualified("fused_a", VariantTag::Fused, {10, 10, 10})});
  CHECK(label_tie.chosen == "fused_a");

  // Dominance: strictly faster candidate always wins.
  const auto dominated =
      select(shape, "fp",
             {qualified("fused_fast", VariantTag::Fused, {10, 11, 12}),
              qualified("fused_slow", VariantTag::Fused, {20, 21, 22})});
  CHECK(dominated.chosen == "fused_fast");

  // Determinism over repeated calls.
  const std::vector<BenchmarkResult> fixed{
      qualified("fused_a", VariantTag::Fused, {30, 10, 20}),
      qualified("four_kernel", VariantTag::FourKernel, {15, 15, 15})};
  const std::string first = select(shape, "fp", fixed).chosen;
  for (int i = 0; i < 100; ++i) {
    CHECK(select(shape, "fp", fixed).chosen == first);
  }

  // All disqualified: hard error.
  BenchmarkResult bad = qualified("fused_bad", VariantTag::Fused, {1, 1, 1});
  bad.disqualified = "corrupted output";
  CHECK_THROWS_AS(select(shape, "fp", {bad}), std::runtime_error);
}

TEST_CASE("cache round-trip is exact, misses are clean") {
  ScopedFile cache(temp_path("roundtrip"));
  const MlpShape shape{2, 4, 8};
  const auto results = profile(default_candidates(shape), shape,
                               ProfileOptions{1, 3, 7});
  const ScheduleEntry entry = select(shape, "cpu-A", results);
  cache_store(entry, cache.path);

  const auto loaded = cache_lookup(shape, "cpu-A", cache.path);
  REQUIRE(loaded.has_value());
  CHECK(*loaded == entry);  // field-for-field

  CHECK_FALSE(cache_lookup(shape, "cpu-B", cache.path).has_value());
  CHECK_FALSE(cache_lookup({9, 9, 9}, "cpu-A", cache.path).has_value());
  CHECK_FALSE(cache_lookup(shape, "cpu-A", temp_path("missing")).has_value());

  // Same key is replaced, not duplicated.
  ScheduleEntry updated = entry;
  updated.chosen = results.front().config_label;
  cache_store(updated, cache.path);
  const auto reloaded = cache_lookup(shape, "cpu-A", cache.path);
  REQUIRE(reloaded.has_value());
  CHECK(reloaded->chosen == updated.chosen);
}

TEST_CASE("cache file is human-readable and versioned") {
  ScopedFile cache(temp_path("versioned"));
  const MlpShape shape{1, 2, 3};
  cache_store({shape, "fp", "four_kernel", {}, "2026-08-09T00:00:00Z"},
              cache.path);
  std::FILE* f = std::fopen(cache.path.c_str(), "r");
  REQUIRE(f != nullptr);
  std::string text(4096, '\0');
  text.resize(std::fread(text.data(), 1, text.size(), f));
  std::fclose(f);
  CHECK(text.find("format_version") != std::string::npos);
  CHECK(text.find("four_kernel") != std::string::npos);
}

TEST_CASE("corrupt and future-version cache files are rejected") {
  ScopedFile corrupt(temp_path("corrupt"));
  std::FILE* f = std::fopen(corrupt.path.c_str(), "w");
  std::fputs("{\"format_version\": 1, \"entries\": [ {\"shap", f);
  std::fclose(f);
  CHECK_THROWS_AS(cache_lookup({1, 2, 3}, "fp", corrupt.path), CacheError);

  ScopedFile future(temp_path("future"));
  f = std::fopen(future.path.c_str(), "w");
  std::fputs("{\"format_version\": 99, \"entries\": []}", f);
  std::fclose(f);
  try {
    (void)cache_lookup({1, 2, 3}, "fp", future.path);
    FAIL("future version accepted");
  } catch (const CacheError& e) {
    CHECK(std::string(e.what()).find("version") != std::string::npos);
  }
}

TEST_CASE("cache survives concurrent writers and readers") {
  ScopedFile cache(temp_path("concurrent"));
  constexpr int kWriters = 4;
  std::vector<std::thread> pool;
  for (int t = 0; t < kWriters; ++t) {
    pool.emplace_back([&cache, t] {
      const MlpShape shape{t + 1, 4, 8};
      for (int round = 0; round < 10; ++round) {
        ScheduleEntry entry{shape, "fp", "fused_round_" + std::to_string(round),
                            {}, "2026-08-09T00:00:00Z"};
        cache_store(entry, cache.path);
        (void)cache_lookup(shape, "fp", cache.path);
      }
    });
  }
  for (auto& th : pool) th.join();

  // Every writer's final entry is present and the file parses cleanly.
  for (int t = 0; t < kWriters; ++t) {
    const auto entry = cache_lookup({t + 1, 4, 8}, "fp", cache.path);
    REQUIRE(entry.has_value());
    CHECK(entry->chosen == "fused_round_9");
  }
}

TEST_CASE("Tuner: warm cache skips profiling") {
  ScopedFile cache(temp_path("tuner"));
  const MlpShape shape{2, 4, 8};
  Tuner tuner({cache.path, "fp", ProfileOptions{1, 3, 9}});

  const ScheduleEntry first = tuner.get_or_tune(shape, default_candidates(shape));
  CHECK(tuner.profile_invocations() == 1);
  CHECK_FALSE(tuner.last_was_cache_hit());

  const ScheduleEntry second =
      tuner.get_or_tune(shape, default_candidates(shape));
  CHECK(tuner.profile_invocations() == 1);  // bypassed
  CHECK(tuner.last_was_cache_hit());
  CHECK(first == second);

  // A second tuner instance reads the same file.
  Tuner other({cache.path, "fp", ProfileOptions{1, 3, 9}});
  (void)other.get_or_tune(shape, default_candidates(shape));
  CHECK(other.profile_invocations() == 0);
}
