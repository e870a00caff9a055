#include "deepfusion/fused.hpp"

#include <algorithm>
#include <sstream>
#include <thread>
#include <vector>

#include "deepfusion/detail/cores.hpp"

namespace deepfusion {

std::string_view to_string(LoopOrder order) {
  return order == LoopOrder::RowMajorTiling ? "row" : "col";
}

void TileConfig::validate() const {
  if (tile_m < 1 || tile_n < 1 || tile_k < 1) {
    std::ostringstream msg;
    msg << "TileConfig: tile dimensions must be >= 1, got " << describe();
    throw ShapeError(msg.str());
  }
}

TileConfig TileConfig::clamped(const MlpShape& shape) const {
  TileConfig t = *this;
  t.tile_m = std::min(t.tile_m, shape.batch);
  t.tile_n = std::min(t.tile_n, shape.d_ff);
  t.tile_k = std::min(t.tile_k, shape.d_model);
  return t;
}

std::string TileConfig::describe() const {
  std::ostringstream out;
  out << "m" << tile_m << "_n" << tile_n << "_k" << tile_k << "_"
      << to_string(loop_order);
  return out.str();
}

namespace {

using detail::ceil_div;

struct FusedDims {
  Index b;     // batch rows
  Index k;     // d_model
  Index n;     // d_ff
};

FusedDims check_fused_input(const Matrix& x, const Matrix& w_up,
                            const Matrix& w_gate, const TileConfig& tile,
                            const Matrix& a2) {
  tile.validate();
  if (w_up.rows() != x.cols() || w_gate.rows() != x.cols() ||
      w_up.cols() != w_gate.cols()) {
    std::ostringstream msg;
    msg << "run_fused_stage1: inconsistent dims, x is " << x.rows() << "x"
        << x.cols() << ", w_up is " << w_up.rows() << "x" << w_up.cols()
        << ", w_gate is " << w_gate.rows() << "x" << w_gate.cols();
    throw ShapeError(msg.str());
  }
  if (a2.rows() != x.rows() || a2.cols() != w_up.cols()) {
    std::ostringstream msg;
    msg << "run_fused_stage1: a2 is " << a2.rows() << "x" << a2.cols()
        << ", expected " << x.rows() << "x" << w_up.cols();
    throw ShapeError(msg.str());
  }
  return {x.rows(), x.cols(), w_up.cols()};
}

// The whole tile walk for one worker's range of outer blocks. Counted mode
// stages operands through scratch with one ledger increment per element
// loaded; the fast path reads operands in place. Both run the same
// accumulation core, so results are bit-identical.
template <bool Counted>
void fused_walk(const Matrix& x, const Matrix& w_up, const Matrix& w_gate,
                Matrix& a2, const TileConfig& t, const FusedDims& d,
                Index outer_begin, Index outer_end) {
  const bool col_major = t.loop_order == LoopOrder::ColumnMajorTiling;
  const Index inner_count =
      col_major ? ceil_div(d.b, t.tile_m) : ceil_div(d.n, t.tile_n);

  std::vector<double> wg_s, wu_s, x_s, accg, accu;
  double* a2_raw = a2.data();

  // Stages the weight strips for columns [j0, j0+bn); returns pointers and
  // the strip stride.
  const double* wg_ptr = nullptr;
  const double* wu_ptr = nullptr;
  Index ldw = 0;
  auto bind_weight_strip = [&](Index j0, Index bn) {
    if constexpr (Counted) {
      wg_s.resize(static_cast<std::size_t>(d.k * bn));
      wu_s.resize(static_cast<std::size_t>(d.k * bn));
      for (Index p = 0; p < d.k; ++p) {
        for (Index c = 0; c < bn; ++c) {
          wg_s[static_cast<std::size_t>(p * bn + c)] = w_gate.load(p, j0 + c);
          wu_s[static_cast<std::size_t>(p * bn + c)] = w_up.load(p, j0 + c);
        }
      }
      wg_ptr = wg_s.data();
      wu_ptr = wu_s.data();
      ldw = bn;
    } else {
      wg_ptr = w_gate.data() + j0;
      wu_ptr = w_up.data() + j0;
      ldw = d.n;
    }
  };

  const double* x_ptr = nullptr;
  auto bind_x_strip = [&](Index i0, Index bm) {
    if constexpr (Counted) {
      x_s.resize(static_cast<std::size_t>(bm * d.k));
      for (Index r = 0; r < bm; ++r) {
        for (Index p = 0; p < d.k; ++p) {
          x_s[static_cast<std::size_t>(r * d.k + p)] = x.load(i0 + r, p);
        }
      }
      x_ptr = x_s.data();
    } else {
      x_ptr = x.data() + i0 * d.k;
    }
  };

  auto compute_tile = [&](Index i0, Index bm, Index j0, Index bn) {
    accg.resize(static_cast<std::size_t>(bm * bn));
    accu.resize(static_cast<std::size_t>(bm * bn));
    detail::fused_tile_accumulate(x_ptr, d.k, wg_ptr, ldw, wu_ptr, ldw,
                                  accg.data(), accu.data(), bm, bn, d.k,
                                  t.tile_k);
    // Epilogue after the full k reduction: SiLU, gate-multiply, single write.
    for (Index ti = 0; ti < bm; ++ti) {
      for (Index tj = 0; tj < bn; ++tj) {
        const std::size_t s = static_cast<std::size_t>(ti * bn + tj);
        const double v = accu[s] * silu(accg[s]);
        if constexpr (Counted) {
          a2.store(i0 + ti, j0 + tj, v);
        } else {
          a2_raw[(i0 + ti) * d.n + j0 + tj] = v;
        }
      }
    }
  };

  for (Index outer = outer_begin; outer < outer_end; ++outer) {
    if (col_major) {
      const Index j0 = outer * t.tile_n;
      const Index bn = std::min(t.tile_n, d.n - j0);
      bind_weight_strip(j0, bn);
      for (Index inner = 0; inner < inner_count; ++inner) {
        const Index i0 = inner * t.tile_m;
        const Index bm = std::min(t.tile_m, d.b - i0);
        bind_x_strip(i0, bm);
        compute_tile(i0, bm, j0, bn);
      }
    } else {
      const Index i0 = outer * t.tile_m;
      const Index bm = std::min(t.tile_m, d.b - i0);
      bind_x_strip(i0, bm);
      for (Index inner = 0; inner < inner_count; ++inner) {
        const Index j0 = inner * t.tile_n;
        const Index bn = std::min(t.tile_n, d.n - j0);
        bind_weight_strip(j0, bn);
        compute_tile(i0, bm, j0, bn);
      }
    }
  }
}

}  // namespace

void run_fused_stage1(const Matrix& x, const Matrix& w_up,
                      const Matrix& w_gate, const TileConfig& tile, Matrix& a2,
                      int num_workers) {
  const FusedDims d = check_fused_input(x, w_up, w_gate, tile, a2);
  const TileConfig t = tile.clamped({d.b, d.k, d.n});
  const bool counted = x.instrumented() || w_up.instrumented() ||
                       w_gate.instrumented() || a2.instrumented();

  const bool col_major = t.loop_order == LoopOrder::ColumnMajorTiling;
  const Index outer_count =
      col_major ? ceil_div(d.n, t.tile_n) : ceil_div(d.b, t.tile_m);

  auto walk = [&](Index lo, Index hi) {
    if (counted) {
      fused_walk<true>(x, w_up, w_gate, a2, t, d, lo, hi);
    } else {
      fused_walk<false>(x, w_up, w_gate, a2, t, d, lo, hi);
    }
  };

  const Index workers = std::clamp<Index>(num_workers, 1, outer_count);
  if (workers == 1) {
    walk(0, outer_count);
    return;
  }
  std::vector<std::thread> pool;
  pool.reserve(static_cast<std::size_t>(workers));
  const Index chunk = ceil_div(outer_count, workers);
  for (Index w = 0; w < workers; ++w) {
    const Index lo = w * chunk;
    const Index hi = std::min(outer_count, lo + chunk);
    if (lo >= hi) break;
    pool.emplace_back(walk, lo, hi);
  }
  for (auto& th : pool) th.join();
}

Matrix run_fused(const Matrix& x, const MlpWeights& w, const TileConfig& tile,
                 int num_workers) {
  w.validate();
  Matrix a2(x.rows(), w.shape.d_ff);
  if (x.ledger()) a2.bind(*x.ledger(), buffers::kA2);
  run_fused_stage1(x, w.w_up, w.w_gate, tile, a2, num_workers);
  return down_projection(a2, w.w_down);
}

ReuseCounts predicted_reuse_counts(const MlpShape& shape,
                                   const TileConfig& tile) {
  shape.validate();
  tile.validate();
  const TileConfig t = tile.clamped(shape);
  const auto b = static_cast<std::uint64_t>(shape.batch);
  const auto k = static_cast<std::uint64_t>(shape.d_model);
  const auto n = static_cast<std::uint64_t>(shape.d_ff);

  ReuseCounts counts;
  counts.a2_writes = b * n;
  if (t.loop_order == LoopOrder::ColumnMajorTiling) {
    counts.x_reads =
        b * k * static_cast<std::uint64_t>(ceil_div(shape.d_ff, t.tile_n));
    counts.weight_reads = 2 * k * n;
  } else {
    counts.x_reads = b * k;
    counts.weight_reads =
        2 * k * n * static_cast<std::uint64_t>(ceil_div(shape.batch, t.tile_m));
  }
  return counts;
}

void run_stage1(VariantTag variant, const Matrix& x, const MlpWeights& w,
                Matrix& a2, const TileConfig& tile, Accounting mode) {
  switch (variant) {
    case VariantTag::FourKernel:
      run_four_kernel_stage1(x, w, a2, mode);
      return;
    case VariantTag::TwoKernel:
      run_two_kernel_stage1(x, w, a2, mode);
      return;
    case VariantTag::Fused:
      w.validate();
      run_fused_stage1(x, w.w_up, w.w_gate, tile, a2);
      return;
  }
  throw std::invalid_argument("run_stage1: unknown variant");
}

Matrix run_variant(const KernelConfig& config, const Matrix& x,
                   const MlpWeights& w, Accounting mode) {
  Matrix a2(x.rows(), w.shape.d_ff);
  if (x.ledger()) a2.bind(*x.ledger(), buffers::kA2);
  run_stage1(config.variant, x, w, a2, config.tile, mode);
  return down_projection(a2, w.w_down, mode);
}

}  // namespace deepfusion
