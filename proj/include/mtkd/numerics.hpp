#pragma once

#include <cstddef>
#include <initializer_list>
#include <span>
#include <vector>

#include "mtkd/errors.hpp"

namespace mtkd {

// Row-major dense matrix of doubles.
class DenseMatrix {
 public:
  DenseMatrix() = default;
  DenseMatrix(std::size_t rows, std::size_t cols, double fill = 0.0)
      : rows_(rows), cols_(cols), data_(rows * cols, fill) {}
  DenseMatrix(std::size_t rows, std::size_t cols, std::vector<double> data);
  DenseMatrix(std::initializer_list<std::initializer_list<double>> rows);

  std::size_t rows() const noexcept { return rows_; }
  std::size_t cols() const noexcept { return cols_; }
  std::size_t size() const noexcept { return data_.size(); }
  bool empty() const noexcept { return data_.empty(); }

  double& operator()(std::size_t r, std::size_t c) noexcept { return data_[r * cols_ + c]; }
  double operator()(std::size_t r, std::size_t c) const noexcept { return data_[r * cols_ + c]; }

  std::span<double> row(std::size_t r) noexcept { return {data_.data() + r * cols_, cols_}; }
  std::span<const double> row(std::size_t r) const noexcept { return {data_.data() + r * cols_, cols_}; }

  std::span<double> data() noexcept { return data_; }
  std::span<const double> data() const noexcept { return data_; }
  const std::vector<double>& values() const noexcept { return data_; }

  bool same_shape(const DenseMatrix& other) const noexcept {
    return rows_ == other.rows_ && cols_ == other.cols_;
  }

  DenseMatrix transposed() const;
  bool all_finite() const noexcept;

  DenseMatrix& operator+=(const DenseMatrix& other);
  DenseMatrix& operator*=(double scale) noexcept;
  void add_scaled(const DenseMatrix& other, double scale);

  bool operator==(const DenseMatrix&) const = default;

 private:
  std::size_t rows_ = 0;
  std::size_t cols_ = 0;
  std::vector<double> data_;
};

// Row-stochastic matrix. Construction validates the invariant.
class ProbMatrix {
 public:
  ProbMatrix() = default;
  explicit ProbMatrix(DenseMatrix inner);

  const DenseMatrix& matrix() const noexcept { return inner_; }
  std::size_t rows() const noexcept { return inner_.rows(); }
  std::size_t cols() const noexcept { return inner_.cols(); }
  double operator()(std::size_t r, std::size_t c) const noexcept { return inner_(r, c); }
  std::span<const double> row(std::size_t r) const noexcept { return inner_.row(r); }

 private:
  DenseMatrix inner_;
};

inline constexpr double kRowSumTolerance = 1e-9;
inline constexpr double kZeroNormThreshold = 1e-12;
inline constexpr double kKlFloor = 1e-12;

double dot(std::span<const double> a, std::span<const double> b);
double norm2(std::span<const double> v);

std::vector<double> l2_normalize(std::span<const double> v);
double cosine_sim(std::span<const double> a, std::span<const double> b);

ProbMatrix softmax_rows(const DenseMatrix& logits, double tau);

// Validates p and q as distributions; q is floored at kKlFloor before the log.
double kl_divergence(std::span<const double> p, std::span<const double> q);

// out[i][j] = U_i . W_j
DenseMatrix pairwise_logits(const DenseMatrix& U, const DenseMatrix& W);

// C = A * B
DenseMatrix matmul(const DenseMatrix& A, const DenseMatrix& B);
// C = A^T * B
DenseMatrix matmul_at_b(const DenseMatrix& A, const DenseMatrix& B);

DenseMatrix gather_rows(const DenseMatrix& m, std::span<const std::size_t> indices);

double max_abs_diff(const DenseMatrix& a, const DenseMatrix& b);

}  // namespace mtkd
