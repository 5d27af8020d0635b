#include "mtkd/numerics.hpp"

#include <algorithm>
#include <cmath>
#include <string>

namespace mtkd {

std::string_view to_string(ErrorCode code) {
  switch (code) {
    case ErrorCode::ZeroVector: return "ZeroVector";
    case ErrorCode::DimensionMismatch: return "DimensionMismatch";
    case ErrorCode::NonPositiveTemperature: return "NonPositiveTemperature";
    case ErrorCode::NotADistribution: return "NotADistribution";
    case ErrorCode::NotUnitNorm: return "NotUnitNorm";
    case ErrorCode::ShapeMismatch: return "ShapeMismatch";
    case ErrorCode::TapeReused: return "TapeReused";
    case ErrorCode::LabelOutOfRange: return "LabelOutOfRange";
    case ErrorCode::EmptyBank: return "EmptyBank";
    case ErrorCode::InvalidSimplex: return "InvalidSimplex";
    case ErrorCode::NonPositiveRatio: return "NonPositiveRatio";
    case ErrorCode::EmptyGradientSet: return "EmptyGradientSet";
    case ErrorCode::TooManyTeachers: return "TooManyTeachers";
    case ErrorCode::InvalidGrid: return "InvalidGrid";
    case ErrorCode::InvalidConfig: return "InvalidConfig";
    case ErrorCode::InvalidSpec: return "InvalidSpec";
    case ErrorCode::IoError: return "IoError";
    case ErrorCode::FormatVersionMismatch: return "FormatVersionMismatch";
    case ErrorCode::ChecksumMismatch: return "ChecksumMismatch";
    case ErrorCode::StrategyTeacherMismatch: return "StrategyTeacherMismatch";
    case ErrorCode::ConfigParseError: return "ConfigParseError";
    case ErrorCode::DataError: return "DataError";
    case ErrorCode::NumericError: return "NumericError";
    case ErrorCode::NoRunsFound: return "NoRunsFound";
  }
  return "Unknown";
}

DenseMatrix::DenseMatrix(std::size_t rows, std::size_t cols, std::vector<double> data)
    : rows_(rows), cols_(cols), data_(std::move(data)) {
  require(data_.size() == rows_ * cols_, ErrorCode::ShapeMismatch,
          "data length " + std::to_string(data_.size()) + " != " + std::to_string(rows_) + "x" +
              std::to_string(cols_));
}

DenseMatrix::DenseMatrix(std::initializer_list<std::initializer_list<double>> rows) {
  rows_ = rows.size();
  cols_ = rows_ == 0 ? 0 : rows.begin()->size();
  data_.reserve(rows_ * cols_);
  for (const auto& r : rows) {
    require(r.size() == cols_, ErrorCode::ShapeMismatch, "ragged initializer");
    data_.insert(data_.end(), r.begin(), r.end());
  }
}

DenseMatrix DenseMatrix::transposed() const {
  DenseMatrix t(cols_, rows_);
  for (std::size_t r = 0; r < rows_; ++r)
    for (std::size_t c = 0; c < cols_; ++c) t(c, r) = (*this)(r, c);
  return t;
}

bool DenseMatrix::all_finite() const noexcept {
  return std::all_of(data_.begin(), data_.end(), [](double x) { return std::isfinite(x); });
}

DenseMatrix& DenseMatrix::operator+=(const DenseMatrix& other) {
  add_scaled(other, 1.0);
  return *this;
}

DenseMatrix& DenseMatrix::operator*=(double scale) noexcept {
  for (double& x : data_) x *= scale;
  return *this;
}

void DenseMatrix::add_scaled(const DenseMatrix& other, double scale) {
  require(same_shape(other), ErrorCode::ShapeMismatch, "add_scaled shape mismatch");
  for (std::size_t i = 0; i < data_.size(); ++i) data_[i] += scale * other.data_[i];
}

ProbMatrix::ProbMatrix(DenseMatrix inner) : inner_(std::move(inner)) {
  for (std::size_t r = 0; r < inner_.rows(); ++r) {
    double sum = 0.0;
    for (double p : inner_.row(r)) {
      require(std::isfinite(p) && p >= 0.0 && p <= 1.0, ErrorCode::NotADistribution,
              "entry outside [0,1] in row " + std::to_string(r));
      sum += p;
    }
    require(std::abs(sum - 1.0) <= kRowSumTolerance, ErrorCode::NotADistribution,
            "row " + std::to_string(r) + " sums to " + std::to_string(sum));
  }
}

double dot(std::span<const double> a, std::span<const double> b) {
  require(a.size() == b.size(), ErrorCode::DimensionMismatch,
          "dot of lengths " + std::to_string(a.size()) + " and " + std::to_string(b.size()));
  double s = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) s += a[i] * b[i];
  return s;
}

double norm2(std::span<const double> v) { return std::sqrt(dot(v, v)); }

std::vector<double> l2_normalize(std::span<const double> v) {
  require(!v.empty(), ErrorCode::ZeroVector, "empty vector");
  const double n = norm2(v);
  require(n >= kZeroNormThreshold, ErrorCode::ZeroVector, "norm below 1e-12");
  std::vector<double> out(v.begin(), v.end());
  for (double& x : out) x /= n;
  return out;
}

double cosine_sim(std::span<const double> a, std::span<const double> b) {
  require(a.size() == b.size(), ErrorCode::DimensionMismatch, "cosine_sim length mismatch");
  const double na = norm2(a);
  const double nb = norm2(b);
  require(na >= kZeroNormThreshold && nb >= kZeroNormThreshold, ErrorCode::ZeroVector,
          "cosine_sim of a zero vector");
  return std::clamp(dot(a, b) / (na * nb), -1.0, 1.0);
}

ProbMatrix softmax_rows(const DenseMatrix& logits, double tau) {
  require(tau > 0.0 && std::isfinite(tau), ErrorCode::NonPositiveTemperature,
          "tau = " + std::to_string(tau));
  DenseMatrix out(logits.rows(), logits.cols());
  for (std::size_t r = 0; r < logits.rows(); ++r) {
    auto in = logits.row(r);
    auto o = out.row(r);
    if (in.empty()) continue;
    const double mx = *std::max_element(in.begin(), in.end()) / tau;
    double sum = 0.0;
    for (std::size_t c = 0; c < in.size(); ++c) {
      o[c] = std::exp(in[c] / tau - mx);
      sum += o[c];
    }
    for (double& x : o) x /= sum;
  }
  return ProbMatrix(std::move(out));
}

double kl_divergence(std::span<const double> p, std::span<const double> q) {
  require(p.size() == q.size(), ErrorCode::DimensionMismatch, "kl_divergence length mismatch");
  auto check = [](std::span<const double> d, const char* name) {
    double sum = 0.0;
    for (double x : d) {
      require(std::isfinite(x) && x >= 0.0, ErrorCode::NotADistribution,
              std::string(name) + " has a negative or non-finite entry");
      sum += x;
    }
    require(std::abs(sum - 1.0) <= kRowSumTolerance, ErrorCode::NotADistribution,
            std::string(name) + " sums to " + std::to_string(sum));
  };
  check(p, "p");
  check(q, "q");
  double kl = 0.0;
  for (std::size_t j = 0; j < p.size(); ++j) {
    if (p[j] == 0.0) continue;
    kl += p[j] * (std::log(p[j]) - std::log(std::max(q[j], kKlFloor)));
  }
  return kl;
}

DenseMatrix pairwise_logits(const DenseMatrix& U, const DenseMatrix& W) {
  require(U.cols() == W.cols(), ErrorCode::DimensionMismatch,
          "pairwise_logits feature dims " + std::to_string(U.cols()) + " vs " + std::to_string(W.cols()));
  DenseMatrix out(U.rows(), W.rows());
  for (std::size_t i = 0; i < U.rows(); ++i) {
    auto u = U.row(i);
    for (std::size_t j = 0; j < W.rows(); ++j) {
      auto w = W.row(j);
      double s = 0.0;
      for (std::size_t k = 0; k < u.size(); ++k) s += u[k] * w[k];
      out(i, j) = s;
    }
  }
  return out;
}

DenseMatrix matmul(const DenseMatrix& A, const DenseMatrix& B) {
  require(A.cols() == B.rows(), ErrorCode::DimensionMismatch, "matmul inner dims");
  DenseMatrix C(A.rows(), B.cols());
  for (std::size_t i = 0; i < A.rows(); ++i) {
    auto c = C.row(i);
    for (std::size_t k = 0; k < A.cols(); ++k) {
      const double a = A(i, k);
      if (a == 0.0) continue;
      auto b = B.row(k);
      for (std::size_t j = 0; j < b.size(); ++j) c[j] += a * b[j];
    }
  }
  return C;
}

DenseMatrix matmul_at_b(const DenseMatrix& A, const DenseMatrix& B) {
  require(A.rows() == B.rows(), ErrorCode::DimensionMismatch, "matmul_at_b row counts");
  DenseMatrix C(A.cols(), B.cols());
  for (std::size_t r = 0; r < A.rows(); ++r) {
    auto a = A.row(r);
    auto b = B.row(r);
    for (std::size_t i = 0; i < a.size(); ++i) {
      if (a[i] == 0.0) continue;
      auto c = C.row(i);
      for (std::size_t j = 0; j < b.size(); ++j) c[j] += a[i] * b[j];
    }
  }
  return C;
}

DenseMatrix gather_rows(const DenseMatrix& m, std::span<const std::size_t> indices) {
  DenseMatrix out(indices.size(), m.cols());
  for (std::size_t i = 0; i < indices.size(); ++i) {
    require(indices[i] < m.rows(), ErrorCode::DimensionMismatch, "gather index out of range");
    auto src = m.row(indices[i]);
    std::copy(src.begin(), src.end(), out.row(i).begin());
  }
  return out;
}

double max_abs_diff(const DenseMatrix& a, const DenseMatrix& b) {
  require(a.same_shape(b), ErrorCode::ShapeMismatch, "max_abs_diff shape mismatch");
  double m = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) m = std::max(m, std::abs(a.data()[i] - b.data()[i]));
  return m;
}

}  // namespace mtkd
