#include <doctest.h>

#include <map>
#include <random>
#include <string>

#include "deepfusion/traffic.hpp"

using namespace deepfusion;

namespace {

// Counting oracle: replays each kernel's buffer touches by enumeration,
// independent of the closed-form predictions.
std::map<std::string, BufferTraffic> count_stage1(VariantTag variant,
                                                  const MlpShape& s,
                                                  const TileConfig* tile) {
  std::map<std::string, BufferTraffic> counts;
  auto touch = [&counts](const char* name, std::uint64_t reads,
                         std::uint64_t writes) {
    counts[name].reads += reads;
    counts[name].writes += writes;
  };
  // One ideal-reuse GEMM kernel: each input element read once, each output
  // element written once.
  auto gemm_kernel = [&](const char* a, Index am, Index ak, const char* b,
                         Index bk, Index bn, const char* out) {
    for (Index i = 0; i < am; ++i)
      for (Index p = 0; p < ak; ++p) touch(a, 1, 0);
    for (Index p = 0; p < bk; ++p)
      for (Index j = 0; j < bn; ++j) touch(b, 1, 0);
    for (Index i = 0; i < am; ++i)
      for (Index j = 0; j < bn; ++j) touch(out, 0, 1);
  };

  switch (variant) {
    case VariantTag::FourKernel:
      gemm_kernel("X", s.batch, s.d_model, "W_gate", s.d_model, s.d_ff,
                  "A_gate");
      gemm_kernel("X", s.batch, s.d_model, "W_up", s.d_model, s.d_ff, "A_1");
      for (Index i = 0; i < s.batch; ++i) {  // SiLU pass
        for (Index j = 0; j < s.d_ff; ++j) {
          touch("A_gate", 1, 0);
          touch("A_silu", 0, 1);
        }
      }
      for (Index i = 0; i < s.batch; ++i) {  // gate multiply
        for (Index j = 0; j < s.d_ff; ++j) {
          touch("A_1", 1, 0);
          touch("A_silu", 1, 0);
          touch("A_2", 0, 1);
        }
      }
      break;
    case VariantTag::TwoKernel:
      gemm_kernel("X", s.batch, s.d_model, "W_gate", s.d_model, s.d_ff,
                  "A_gate_up");
      for (Index p = 0; p < s.d_model; ++p) {  // grouped half for W_up
        for (Index j = 0; j < s.d_ff; ++j) touch("W_up", 1, 0);
      }
      for (Index i = 0; i < s.batch; ++i) {  // W_up half of the output
        for (Index j = 0; j < s.d_ff; ++j) touch("A_gate_up", 0, 1);
      }
      for (Index i = 0; i < s.batch; ++i) {  // fused silu-mul kernel
        for (Index j = 0; j < s.d_ff; ++j) {
          touch("A_gate_up", 2, 0);
          touch("A_2", 0, 1);
        }
      }
      break;
    case VariantTag::Fused: {
      const TileConfig t = tile->clamped(s);
      const bool col = t.loop_order == LoopOrder::ColumnMajorTiling;
      for (Index j0 = 0; j0 < s.d_ff; j0 += t.tile_n) {
        const Index bn = std::min(t.tile_n, s.d_ff - j0);
        const Index weight_loads = col ? 1 : (s.batch + t.tile_m - 1) / t.tile_m;
        for (Index rep = 0; rep < weight_loads; ++rep) {
          for (Index p = 0; p < s.d_model; ++p) {
            for (Index c = 0; c < bn; ++c) {
              touch("W_gate", 1, 0);
              touch("W_up", 1, 0);
            }
          }
        }
      }
      for (Index i0 = 0; i0 < s.batch; i0 += t.tile_m) {
        const Index bm = std::min(t.tile_m, s.batch - i0);
        const Index x_loads = col ? (s.d_ff + t.tile_n - 1) / t.tile_n : 1;
        for (Index rep = 0; rep < x_loads; ++rep) {
          for (Index r = 0; r < bm; ++r) {
            for (Index p = 0; p < s.d_model; ++p) touch("X", 1, 0);
          }
        }
      }
      for (Index i = 0; i < s.batch; ++i) {
        for (Index j = 0; j < s.d_ff; ++j) touch("A_2", 0, 1);
      }
      break;
    }
  }
  return counts;
}

std::uint64_t total(const std::map<std::string, BufferTraffic>& counts) {
  std::uint64_t sum = 0;
  for (const auto& [name, c] : counts) sum += c.reads + c.writes;
  return sum;
}

TileConfig single_tile(const MlpShape& s) {
  return {s.batch, s.d_ff, s.d_model, LoopOrder::ColumnMajorTiling};
}

}  // namespace

TEST_CASE("worked example: stage-1 element totals 192 / 152 / 88") {
  const MlpShape shape{2, 4, 8};
  CHECK(predict_stage1_traffic(VariantTag::FourKernel, shape)
            .total_elements() == 192);
  CHECK(predict_stage1_traffic(VariantTag::TwoKernel, shape)
            .total_elements() == 152);
  CHECK(predict_stage1_traffic(VariantTag::Fused, shape, single_tile(shape))
            .total_elements() == 88);
  CHECK(predict_stage2_traffic(shape).total_elements() ==
        2 * 8 + 8 * 4 + 2 * 4);
}

TEST_CASE("predictions match the enumeration-based counting oracle") {
  const std::vector<MlpShape> shapes{{2, 4, 8}, {3, 5, 7}, {1, 2, 3}};
  for (const MlpShape& shape : shapes) {
    for (VariantTag variant :
         {VariantTag::FourKernel, VariantTag::TwoKernel}) {
      const auto oracle = count_stage1(variant, shape, nullptr);
      const auto predicted = predict_stage1_traffic(variant, shape);
      CHECK(total(oracle) == predicted.total_elements());
      for (const auto& [name, c] : oracle) {
        CHECK(predicted.per_buffer.at(name) == c);
      }
    }
    for (const TileConfig& tile :
         {single_tile(shape), TileConfig{1, 3, 2, LoopOrder::ColumnMajorTiling},
          TileConfig{2, 3, 2, LoopOrder::RowMajorTiling}}) {
      const auto oracle = count_stage1(VariantTag::Fused, shape, &tile);
      const auto predicted =
          predict_stage1_traffic(VariantTag::Fused, shape, tile);
      CHECK(total(oracle) == predicted.total_elements());
      for (const auto& [name, c] : oracle) {
        CHECK(predicted.per_buffer.at(name) == c);
      }
    }
  }
}

TEST_CASE("two-kernel minus single-tile fused saving is exactly 4*B*d_ff") {
  std::mt19937_64 rng(61);
  for (int i = 0; i < 50; ++i) {
    const MlpShape shape{1 + static_cast<Index>(rng() % 64),
                         1 + static_cast<Index>(rng() % 64),
                         1 + static_cast<Index>(rng() % 256)};
    const auto two =
        predict_stage1_traffic(VariantTag::TwoKernel, shape).total_elements();
    const auto fused =
        predict_stage1_traffic(VariantTag::Fused, shape, single_tile(shape))
            .total_elements();
    CHECK(two - fused ==
          static_cast<std::uint64_t>(4 * shape.batch * shape.d_ff));
  }
}

TEST_CASE("strict traffic ordering over the sampled grid") {
  for (Index b : {1, 2, 8, 64}) {
    for (Index dm : {4, 16, 64}) {
      for (Index df : {8, 64, 256}) {
        const MlpShape shape{b, dm, df};
        const auto four = predict_stage1_traffic(VariantTag::FourKernel, shape)
                              .total_elements();
        const auto two = predict_stage1_traffic(VariantTag::TwoKernel, shape)
                             .total_elements();
        const auto fused =
            predict_stage1_traffic(VariantTag::Fused, shape,
                                   single_tile(shape))
                .total_elements();
        CHECK(fused < two);
        CHECK(two < four);
      }
    }
  }
}

TEST_CASE("verify_against_instrumented: empty diffs across variants") {
  CHECK(verify_against_instrumented(VariantTag::FourKernel, {2, 4, 8},
                                    std::nullopt, 1)
            .empty());
  CHECK(verify_against_instrumented(VariantTag::TwoKernel, {2, 4, 8},
                                    std::nullopt, 2)
            .empty());
  const MlpShape shape{2, 4, 8};
  CHECK(verify_against_instrumented(VariantTag::Fused, shape,
                                    single_tile(shape), 3)
            .empty());
  // Edge tiles: d_ff=7 with tile_n=3.
  const MlpShape edge{3, 5, 7};
  CHECK(verify_against_instrumented(
            VariantTag::Fused, edge,
            TileConfig{2, 3, 2, LoopOrder::ColumnMajorTiling}, 4)
            .empty());
  CHECK(verify_against_instrumented(
            VariantTag::Fused, edge,
            TileConfig{2, 3, 2, LoopOrder::RowMajorTiling}, 5)
            .empty());
}

TEST_CASE("diff reports name the buffer and both counts") {
  TrafficReport predicted;
  predicted.add("X", 8, 0);
  std::map<std::string, AccessCounts> observed;
  observed["X"] = {6, 0};
  observed["A_silu"] = {0, 4};
  const TrafficDiff diff = diff_against(predicted, observed);
  REQUIRE(diff.mismatches.size() == 2);
  const std::string text = diff.to_string();
  CHECK(text.find("X") != std::string::npos);
  CHECK(text.find("A_silu") != std::string::npos);
  CHECK(text.find("predicted r=8") != std::string::npos);
  CHECK(text.find("observed r=6") != std::string::npos);
}

TEST_CASE("fused prediction requires a tile config") {
  CHECK_THROWS_AS(predict_stage1_traffic(VariantTag::Fused, {1, 2, 3}),
                  std::invalid_argument);
  CHECK_THROWS_AS(
      verify_against_instrumented(VariantTag::Fused, {1, 2, 3}, {}, 0),
      std::invalid_argument);
}

TEST_CASE("FLOPs are variant-invariant and intensity orders as expected") {
  const MlpShape shape{2, 4, 8};
  const std::uint64_t expected = 2ull * 2 * 4 * 8 * 2 + 4ull * 2 * 8;
  CHECK(stage1_flops(VariantTag::FourKernel, shape) == expected);
  CHECK(stage1_flops(VariantTag::TwoKernel, shape) == expected);
  CHECK(stage1_flops(VariantTag::Fused, shape, single_tile(shape)) ==
        expected);
  CHECK(stage1_flops(VariantTag::Fused, shape,
                     TileConfig{1, 3, 2, LoopOrder::RowMajorTiling}) ==
        expected);

  const double four = arithmetic_intensity(VariantTag::FourKernel, shape);
  const double two = arithmetic_intensity(VariantTag::TwoKernel, shape);
  const double fused =
      arithmetic_intensity(VariantTag::Fused, shape, single_tile(shape));
  CHECK(fused > two);
  CHECK(two > four);

  // Positive byte scaling never changes the ordering.
  const double fused8 =
      arithmetic_intensity(VariantTag::Fused, shape, single_tile(shape), 8);
  const double two8 = arithmetic_intensity(VariantTag::TwoKernel, shape, {}, 8);
  CHECK(fused8 > two8);
}

TEST_CASE("TrafficReport totals and byte accounting") {
  TrafficReport report;
  report.bytes_per_element = 2;
  report.add("X", 3, 0).add("Y", 0, 5);
  CHECK(report.total_elements() == 8);
  CHECK(report.total_bytes() == 16);
  TrafficReport other;
  other.add("X", 1, 1);
  report.merge(other);
  CHECK(report.per_buffer.at("X").reads == 4);
  CHECK(report.per_buffer.at("X").writes == 1);
}
