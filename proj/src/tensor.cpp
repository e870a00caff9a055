#include "deepfusion/tensor.hpp"

#include <sstream>

namespace deepfusion {

AccessLedger::Counters* AccessLedger::slot(const std::string& name) {
  std::lock_guard<std::mutex> lk(mu_);
  auto& entry = entries_[name];
  if (!entry) entry = std::make_unique<Counters>();
  return entry.get();
}

void AccessLedger::reset() {
  std::lock_guard<std::mutex> lk(mu_);
  for (auto& [name, counters] : entries_) {
    counters->reads.store(0, std::memory_order_relaxed);
    counters->writes.store(0, std::memory_order_relaxed);
  }
}

bool AccessLedger::has(const std::string& name) const {
  std::lock_guard<std::mutex> lk(mu_);
  return entries_.count(name) != 0;
}

AccessCounts AccessLedger::counts(const std::string& name) const {
  std::lock_guard<std::mutex> lk(mu_);
  auto it = entries_.find(name);
  if (it == entries_.end()) return {};
  return {it->second->reads.load(std::memory_order_relaxed),
          it->second->writes.load(std::memory_order_relaxed)};
}

std::map<std::string, AccessCounts> AccessLedger::snapshot() const {
  std::lock_guard<std::mutex> lk(mu_);
  std::map<std::string, AccessCounts> out;
  for (const auto& [name, counters] : entries_) {
    out[name] = {counters->reads.load(std::memory_order_relaxed),
                 counters->writes.load(std::memory_order_relaxed)};
  }
  return out;
}

std::uint64_t AccessLedger::total_elements() const {
  std::uint64_t total = 0;
  for (const auto& [name, counts] : snapshot()) {
    total += counts.reads + counts.writes;
  }
  return total;
}

Matrix::Matrix(Index rows, Index cols) : rows_(rows), cols_(cols) {
  if (rows < 1 || cols < 1) {
    std::ostringstream msg;
    msg << "Matrix: dimensions must be >= 1, got " << rows << "x" << cols;
    throw ShapeError(msg.str());
  }
  data_.assign(static_cast<std::size_t>(rows) * static_cast<std::size_t>(cols),
               0.0);
}

Matrix Matrix::identity(Index n) {
  Matrix m(n, n);
  for (Index i = 0; i < n; ++i) m(i, i) = 1.0;
  return m;
}

void Matrix::bind(AccessLedger& ledger, std::string name) {
  ledger_ = &ledger;
  name_ = std::move(name);
  counters_ = ledger.slot(name_);
}

void Matrix::unbind() {
  ledger_ = nullptr;
  counters_ = nullptr;
  name_.clear();
}

void Matrix::set_zero() { std::fill(data_.begin(), data_.end(), 0.0); }

void MlpShape::validate() const {
  if (batch < 1 || d_model < 1 || d_ff < 1) {
    std::ostringstream msg;
    msg << "MlpShape: all dimensions must be >= 1, got " << to_string(*this);
    throw ShapeError(msg.str());
  }
}

bool MlpShape::ff_ratio_typical() const {
  const double ratio =
      static_cast<double>(d_ff) / static_cast<double>(d_model);
  return ratio >= 3.5 && ratio <= 4.0;
}

std::string to_string(const MlpShape& s) {
  std::ostringstream out;
  out << "(B=" << s.batch << ", d_model=" << s.d_model << ", d_ff=" << s.d_ff
      << ")";
  return out.str();
}

namespace {

std::string describe(const Matrix& m, const char* fallback) {
  std::ostringstream out;
  out << (m.buffer_name().empty() ? fallback : m.buffer_name().c_str()) << " ["
      << m.rows() << "x" << m.cols() << "]";
  return out.str();
}

}  // namespace

void matmul(const Matrix& a, const Matrix& b, Matrix& out) {
  if (a.cols() != b.rows()) {
    throw ShapeError("matmul: inner dimensions mismatch between " +
                     describe(a, "A") + " and " + describe(b, "B"));
  }
  if (out.rows() != a.rows() || out.cols() != b.cols()) {
    throw ShapeError("matmul: output " + describe(out, "out") +
                     " does not match " + describe(a, "A") + " * " +
                     describe(b, "B"));
  }
  const Index m = a.rows(), k = a.cols(), n = b.cols();
  for (Index i = 0; i < m; ++i) {
    for (Index j = 0; j < n; ++j) {
      double acc = 0.0;
      for (Index p = 0; p < k; ++p) {
        acc += a.load(i, p) * b.load(p, j);
      }
      out.store(i, j, acc);
    }
  }
}

void elementwise_mul(const Matrix& a, const Matrix& b, Matrix& out) {
  if (a.rows() != b.rows() || a.cols() != b.cols() || a.rows() != out.rows() ||
      a.cols() != out.cols()) {
    throw ShapeError("elementwise_mul: shape mismatch among " +
                     describe(a, "A") + ", " + describe(b, "B") + ", " +
                     describe(out, "out"));
  }
  for (Index i = 0; i < a.rows(); ++i) {
    for (Index j = 0; j < a.cols(); ++j) {
      out.store(i, j, a.load(i, j) * b.load(i, j));
    }
  }
}

double uniform_double(std::mt19937_64& rng, double lo, double hi) {
  // 53 top bits -> [0, 1); affine map to [lo, hi).
  const double u = static_cast<double>(rng() >> 11) * 0x1.0p-53;
  return lo + u * (hi - lo);
}

void fill_uniform(Matrix& m, std::mt19937_64& rng, double lo, double hi) {
  for (Index i = 0; i < m.rows(); ++i) {
    for (Index j = 0; j < m.cols(); ++j) {
      m(i, j) = uniform_double(rng, lo, hi);
    }
  }
}

}  // namespace deepfusion
