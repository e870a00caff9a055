#include "deepfusion/tp.hpp"

#include <algorithm>
#include <sstream>

namespace deepfusion {

std::vector<ColRange> balanced_ranges(Index extent, Index parts) {
  if (parts < 1) {
    throw ShapeError("balanced_ranges: parts must be >= 1");
  }
  if (parts > extent) {
    std::ostringstream msg;
    msg << "balanced_ranges: cannot split extent " << extent << " into "
        << parts << " non-empty ranges";
    throw ShapeError(msg.str());
  }
  const Index base = extent / parts;
  const Index remainder = extent % parts;
  std::vector<ColRange> ranges;
  ranges.reserve(static_cast<std::size_t>(parts));
  Index cursor = 0;
  for (Index p = 0; p < parts; ++p) {
    const Index width = base + (p < remainder ? 1 : 0);
    ranges.push_back({cursor, cursor + width});
    cursor += width;
  }
  return ranges;
}

void ShardPlan::validate(Index d_ff) const {
  if (num_devices < 1 ||
      ff_ranges.size() != static_cast<std::size_t>(num_devices)) {
    throw ShapeError("ShardPlan: range count does not match num_devices");
  }
  Index cursor = 0;
  for (const ColRange& r : ff_ranges) {
    if (r.begin != cursor || r.size() < 1) {
      std::ostringstream msg;
      msg << "ShardPlan: ranges must be contiguous, disjoint and non-empty; "
             "offending range ["
          << r.begin << ", " << r.end << ") at cursor " << cursor;
      throw ShapeError(msg.str());
    }
    cursor = r.end;
  }
  if (cursor != d_ff) {
    std::ostringstream msg;
    msg << "ShardPlan: ranges cover [0, " << cursor << ") but d_ff is "
        << d_ff;
    throw ShapeError(msg.str());
  }
}

ShardPlan make_plan(Index d_ff, Index num_devices, ShardScheme scheme) {
  ShardPlan plan;
  plan.num_devices = num_devices;
  plan.ff_ranges = balanced_ranges(d_ff, num_devices);
  plan.scheme = scheme;
  return plan;
}

std::string_view to_string(CollectiveKind kind) {
  return kind == CollectiveKind::AllReduce ? "all_reduce" : "all_gather";
}

namespace {

Matrix column_slice(const Matrix& m, ColRange r) {
  Matrix out(m.rows(), r.size());
  for (Index i = 0; i < m.rows(); ++i) {
    for (Index j = 0; j < r.size(); ++j) {
      out(i, j) = m(i, r.begin + j);
    }
  }
  return out;
}

Matrix row_slice(const Matrix& m, ColRange r) {
  Matrix out(r.size(), m.cols());
  for (Index i = 0; i < r.size(); ++i) {
    for (Index j = 0; j < m.cols(); ++j) {
      out(i, j) = m(r.begin + i, j);
    }
  }
  return out;
}

// Sums the per-device partials in device-index order (deterministic).
Matrix simulated_all_reduce(std::vector<Matrix>& partials,
                            CollectiveLog& log) {
  Matrix out = std::move(partials.front());
  for (std::size_t p = 1; p < partials.size(); ++p) {
    const Matrix& part = partials[p];
    for (Index i = 0; i < out.rows(); ++i) {
      for (Index j = 0; j < out.cols(); ++j) {
        out(i, j) += part(i, j);
      }
    }
  }
  log.events.push_back(
      {CollectiveKind::AllReduce,
       static_cast<std::uint64_t>(out.rows() * out.cols())});
  return out;
}

// Concatenates per-device column slices into the full matrix. The logged
// payload is the largest per-device contribution (a ring round is gated by
// the widest block).
Matrix simulated_all_gather(const std::vector<Matrix>& slices,
                            const std::vector<ColRange>& ranges,
                            CollectiveLog& log) {
  const Index rows = slices.front().rows();
  const Index cols = ranges.back().end;
  Matrix out(rows, cols);
  std::uint64_t max_payload = 0;
  for (std::size_t p = 0; p < slices.size(); ++p) {
    const Matrix& slice = slices[p];
    const ColRange r = ranges[p];
    for (Index i = 0; i < rows; ++i) {
      for (Index j = 0; j < r.size(); ++j) {
        out(i, r.begin + j) = slice(i, j);
      }
    }
    max_payload = std::max(
        max_payload, static_cast<std::uint64_t>(slice.rows() * slice.cols()));
  }
  log.events.push_back({CollectiveKind::AllGather, max_payload});
  return out;
}

Matrix plain_gemm(const Matrix& a, const Matrix& b) {
  Matrix out(a.rows(), b.cols());
  matmul(a, b, out);
  return out;
}

}  // namespace

TpResult run_tp_mlp(const Matrix& x, const MlpWeights& w,
                    const ShardPlan& plan, const KernelConfig& executor) {
  w.validate();
  plan.validate(w.shape.d_ff);
  if (plan.scheme != ShardScheme::CompoundSingleAllReduce) {
    throw std::invalid_argument(
        "run_tp_mlp: plan scheme must be CompoundSingleAllReduce (use "
        "run_naive_tp_mlp for the per-GEMM baseline)");
  }
  if (x.cols() != w.shape.d_model) {
    throw ShapeError("run_tp_mlp: x column count does not match d_model");
  }

  TpResult result;
  std::vector<Matrix> partials;
  partials.reserve(plan.ff_ranges.size());
  for (const ColRange& r : plan.ff_ranges) {
    MlpWeights shard{column_slice(w.w_up, r), column_slice(w.w_gate, r),
                     row_slice(w.w_down, r),
                     MlpShape{x.rows(), w.shape.d_model, r.size()}};
    Matrix a2(x.rows(), r.size());
    run_stage1(executor.variant, x, shard, a2, executor.tile);
    partials.push_back(down_projection(a2, shard.w_down));
    result.stage1_shards.push_back(std::move(a2));
  }
  result.output = simulated_all_reduce(partials, result.log);
  return result;
}

TpResult run_naive_tp_gemm(const Matrix& x, const Matrix& w,
                           const ShardPlan& plan) {
  if (plan.scheme != ShardScheme::NaivePerGemmAllGather) {
    throw std::invalid_argument(
        "run_naive_tp_gemm: plan scheme must be NaivePerGemmAllGather");
  }
  if (x.cols() != w.rows()) {
    throw ShapeError("run_naive_tp_gemm: inner dimensions mismatch");
  }
  const std::vector<ColRange> ranges =
      balanced_ranges(w.cols(), plan.num_devices);
  TpResult result;
  std::vector<Matrix> slices;
  slices.reserve(ranges.size());
  for (const ColRange& r : ranges) {
    slices.push_back(plain_gemm(x, column_slice(w, r)));
  }
  result.output = simulated_all_gather(slices, ranges, result.log);
  return result;
}

TpResult run_naive_tp_mlp(const Matrix& x, const MlpWeights& w,
                          const ShardPlan& plan) {
  w.validate();
  plan.validate(w.shape.d_ff);
  if (plan.scheme != ShardScheme::NaivePerGemmAllGather) {
    throw std::invalid_argument(
        "run_naive_tp_mlp: plan scheme must be NaivePerGemmAllGather");
  }
  const Index b = x.rows(), d_ff = w.shape.d_ff;

  // Grouped stage-1 GEMM, column-split over the concatenated [W_gate|W_up]
  // width, gathered to the full B x 2*d_ff buffer on every device.
  Matrix grouped(w.shape.d_model, 2 * d_ff);
  for (Index i = 0; i < w.shape.d_model; ++i) {
    for (Index j = 0; j < d_ff; ++j) {
      grouped(i, j) = w.w_gate(i, j);
      grouped(i, j + d_ff) = w.w_up(i, j);
    }
  }
  const std::vector<ColRange> stage1_ranges =
      balanced_ranges(2 * d_ff, plan.num_devices);
  TpResult result;
  std::vector<Matrix> slices;
  for (const ColRange& r : stage1_ranges) {
    slices.push_back(plain_gemm(x, column_slice(grouped, r)));
  }
  Matrix concat = simulated_all_gather(slices, stage1_ranges, result.log);

  // Pointwise gating is local (every device holds the full buffer now).
  Matrix a2(b, d_ff);
  for (Index i = 0; i < b; ++i) {
    for (Index j = 0; j < d_ff; ++j) {
      a2(i, j) = concat(i, j + d_ff) * silu(concat(i, j));
    }
  }

  // Down GEMM, column-split over d_model, gathered.
  const std::vector<ColRange> down_ranges =
      balanced_ranges(w.shape.d_model, plan.num_devices);
  slices.clear();
  for (const ColRange& r : down_ranges) {
    slices.push_back(plain_gemm(a2, column_slice(w.w_down, r)));
  }
  result.output = simulated_all_gather(slices, down_ranges, result.log);
  return result;
}

double comm_volume_bytes(const CollectiveLog& log, Index num_devices,
                         CommModel model, std::uint64_t bytes_per_element) {
  if (num_devices < 1) {
    throw ShapeError("comm_volume_bytes: num_devices must be >= 1");
  }
  const double p = static_cast<double>(num_devices);
  double bytes = 0.0;
  for (const CollectiveEvent& event : log.events) {
    const double payload = static_cast<double>(
        event.payload_elements_per_device * bytes_per_element);
    switch (model) {
      case CommModel::Logical:
        bytes += payload;
        break;
      case CommModel::Ring:
        if (event.kind == CollectiveKind::AllReduce) {
          bytes += 2.0 * (p - 1.0) / p * payload;
        } else {
          bytes += (p - 1.0) / p * payload;
        }
        break;
    }
  }
  return bytes;
}

}  // namespace deepfusion
