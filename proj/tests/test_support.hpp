#pragma once

#include <algorithm>
#include <cmath>
#include <functional>
#include <optional>
#include <vector>

#include "mtkd/errors.hpp"
#include "mtkd/numerics.hpp"
#include "mtkd/rng.hpp"

namespace mtkd::testing {

template <class Fn>
std::optional<ErrorCode> error_code_of(Fn&& fn) {
  try {
    fn();
  } catch (const Error& e) {
    return e.code();
  }
  return std::nullopt;
}

inline DenseMatrix random_matrix(SeededRng& rng, std::size_t rows, std::size_t cols, double scale = 1.0) {
  DenseMatrix m(rows, cols);
  for (double& x : m.data()) x = scale * rng.normal();
  return m;
}

inline DenseMatrix random_unit_rows(SeededRng& rng, std::size_t rows, std::size_t cols) {
  DenseMatrix m = random_matrix(rng, rows, cols);
  for (std::size_t r = 0; r < rows; ++r) {
    auto n = l2_normalize(m.row(r));
    std::copy(n.begin(), n.end(), m.row(r).begin());
  }
  return m;
}

inline std::vector<double> random_distribution(SeededRng& rng, std::size_t n) {
  std::vector<double> p(n);
  double s = 0.0;
  for (double& x : p) {
    x = rng.uniform() + 1e-3;
    s += x;
  }
  for (double& x : p) x /= s;
  return p;
}

// Central finite differences of a scalar function over every entry of x.
// Test-only oracle: it never calls into the analytic gradient code.
inline std::vector<double> central_differences(std::vector<double> x,
                                               const std::function<double(const std::vector<double>&)>& f,
                                               double step = 1e-5) {
  std::vector<double> grad(x.size());
  for (std::size_t i = 0; i < x.size(); ++i) {
    const double orig = x[i];
    x[i] = orig + step;
    const double fp = f(x);
    x[i] = orig - step;
    const double fm = f(x);
    x[i] = orig;
    grad[i] = (fp - fm) / (2.0 * step);
  }
  return grad;
}

// |a - n| / max(|a|, |n|, floor). The floor keeps coordinates whose true
// derivative is ~0 from dominating through pure rounding noise.
inline double relative_error(double analytic, double numeric, double floor = 1e-6) {
  return std::abs(analytic - numeric) / std::max({std::abs(analytic), std::abs(numeric), floor});
}

struct GradCheckSummary {
  std::size_t total = 0;
  std::size_t passing = 0;
  double worst = 0.0;
  double pass_fraction() const { return total == 0 ? 1.0 : static_cast<double>(passing) / total; }
};

inline void accumulate(GradCheckSummary& s, const std::vector<double>& analytic,
                       const std::vector<double>& numeric, double tol = 1e-5) {
  for (std::size_t i = 0; i < analytic.size(); ++i) {
    const double e = relative_error(analytic[i], numeric[i]);
    s.total += 1;
    if (e <= tol) s.passing += 1;
    s.worst = std::max(s.worst, e);
  }
}

}  // namespace mtkd::testing
