#pragma once

#include <atomic>
#include <cassert>
#include <cmath>
#include <cstdint>
#include <map>
#include <memory>
#include <mutex>
#include <random>
#include <stdexcept>
#include <string>
#include <vector>

namespace deepfusion {

using Index = std::int64_t;

// Thrown on dimension/shape violations; the message names the offending
// operands and their dimensions.
struct ShapeError : std::invalid_argument {
  using std::invalid_argument::invalid_argument;
};

// ---------------------------------------------------------------------------
// AccessLedger: per-buffer counts of logical global-memory element transfers.
//
// Counts are taken at kernel boundaries (one increment per element read or
// written by a kernel), not at hardware cache-line granularity. Counters are
// atomic so parallel tile workers can increment the same buffer exactly.
// ---------------------------------------------------------------------------
struct AccessCounts {
  std::uint64_t reads = 0;
  std::uint64_t writes = 0;

  bool operator==(const AccessCounts&) const = default;
};

class AccessLedger {
 public:
  struct Counters {
    std::atomic<std::uint64_t> reads{0};
    std::atomic<std::uint64_t> writes{0};
  };

  // Returns the counter slot for `name`, creating it if absent. The returned
  // pointer stays valid for the ledger's lifetime.
  Counters* slot(const std::string& name);

  // Zeroes every counter (entries are kept).
  void reset();

  bool has(const std::string& name) const;
  AccessCounts counts(const std::string& name) const;
  std::map<std::string, AccessCounts> snapshot() const;

  // Sum of reads+writes over all buffers.
  std::uint64_t total_elements() const;

 private:
  mutable std::mutex mu_;  // guards the map shape; counters are atomic
  std::map<std::string, std::unique_ptr<Counters>> entries_;
};

// ---------------------------------------------------------------------------
// Matrix: dense row-major 2-D container of 64-bit floats.
//
// Two access surfaces:
//   operator()  — plain element access for setup and inspection, never counted;
//   load/store  — kernel-boundary access, counted when bound to a ledger.
// Tile-local scratch inside executors stays in raw vectors and is never bound.
// ---------------------------------------------------------------------------
class Matrix {
 public:
  Matrix() = default;
  Matrix(Index rows, Index cols);

  static Matrix identity(Index n);

  Index rows() const { return rows_; }
  Index cols() const { return cols_; }
  Index size() const { return rows_ * cols_; }

  double& operator()(Index i, Index j) {
    assert(i >= 0 && i < rows_ && j >= 0 && j < cols_);
    return data_[static_cast<std::size_t>(i * cols_ + j)];
  }
  double operator()(Index i, Index j) const {
    assert(i >= 0 && i < rows_ && j >= 0 && j < cols_);
    return data_[static_cast<std::size_t>(i * cols_ + j)];
  }

  double* data() { return data_.data(); }
  const double* data() const { return data_.data(); }

  // Counted read at a kernel boundary.
  double load(Index i, Index j) const {
    assert(i >= 0 && i < rows_ && j >= 0 && j < cols_);
    if (counters_) counters_->reads.fetch_add(1, std::memory_order_relaxed);
    return data_[static_cast<std::size_t>(i * cols_ + j)];
  }

  // Counted write at a kernel boundary.
  void store(Index i, Index j, double v) {
    assert(i >= 0 && i < rows_ && j >= 0 && j < cols_);
    if (counters_) counters_->writes.fetch_add(1, std::memory_order_relaxed);
    data_[static_cast<std::size_t>(i * cols_ + j)] = v;
  }

  // Attach this matrix to `ledger` under `name`; subsequent load/store calls
  // increment that buffer's counters by exactly one per element access.
  // Copies of a bound matrix share the binding (same logical buffer).
  void bind(AccessLedger& ledger, std::string name);
  void unbind();
  bool instrumented() const { return counters_ != nullptr; }
  AccessLedger* ledger() const { return ledger_; }
  const std::string& buffer_name() const { return name_; }

  void set_zero();

 private:
  Index rows_ = 0;
  Index cols_ = 0;
  std::vector<double> data_;
  std::string name_;
  AccessLedger* ledger_ = nullptr;
  AccessLedger::Counters* counters_ = nullptr;
};

// ---------------------------------------------------------------------------
// MlpShape: problem dimensions of one SwiGLU block.
// ---------------------------------------------------------------------------
struct MlpShape {
  Index batch = 1;    // B
  Index d_model = 1;  // model width
  Index d_ff = 1;     // feed-forward width

  bool operator==(const MlpShape&) const = default;

  // Throws ShapeError if any dimension is < 1.
  void validate() const;

  // True when d_ff/d_model falls in the usual [3.5, 4.0] band. Shapes outside
  // the band are still accepted; callers may warn.
  bool ff_ratio_typical() const;
};

std::string to_string(const MlpShape& s);

// ---------------------------------------------------------------------------
// Scalar activations.
// ---------------------------------------------------------------------------

// Numerically stable logistic function; saturates cleanly for large |x|.
inline double sigmoid(double x) {
  if (x >= 0.0) {
    return 1.0 / (1.0 + std::exp(-x));
  }
  const double e = std::exp(x);
  return e / (1.0 + e);
}

inline double silu(double x) { return x * sigmoid(x); }

// ---------------------------------------------------------------------------
// Naive reference kernels on matrices.
// ---------------------------------------------------------------------------

// out = a * b, accumulated in 64-bit per output element (k ascending).
// When instrumented, this naive loop reads each `a` element n times, each
// `b` element m times, and writes each `out` element once.
void matmul(const Matrix& a, const Matrix& b, Matrix& out);

// out = a ⊗ b; one read per input element, one write per output element.
void elementwise_mul(const Matrix& a, const Matrix& b, Matrix& out);

// ---------------------------------------------------------------------------
// Deterministic fills (bit-stable across platforms: raw 64-bit draws are
// mapped to doubles without std::uniform_real_distribution).
// ---------------------------------------------------------------------------
double uniform_double(std::mt19937_64& rng, double lo, double hi);
void fill_uniform(Matrix& m, std::mt19937_64& rng, double lo = -1.0,
                  double hi = 1.0);

}  // namespace deepfusion
