#include <cmath>
#include <numbers>

#include "doctest.h"
#include "mtkd/numerics.hpp"
#include "test_support.hpp"

using namespace mtkd;
using mtkd::testing::error_code_of;

TEST_CASE("l2_normalize") {
  auto v = l2_normalize(std::vector<double>{3, 4});
  CHECK(v[0] == doctest::Approx(0.6).epsilon(1e-15));
  CHECK(v[1] == doctest::Approx(0.8).epsilon(1e-15));

  auto e = l2_normalize(std::vector<double>{1, 0, 0});
  CHECK(e == std::vector<double>{1, 0, 0});

  CHECK(error_code_of([] { l2_normalize(std::vector<double>{0, 0}); }) == ErrorCode::ZeroVector);
  CHECK(error_code_of([] { l2_normalize(std::vector<double>{}); }) == ErrorCode::ZeroVector);
}

TEST_CASE("l2_normalize is idempotent") {
  SeededRng rng(11);
  for (int trial = 0; trial < 500; ++trial) {
    std::vector<double> v(1 + rng.uniform_index(20));
    for (double& x : v) x = rng.normal(0.0, 10.0);
    auto once = l2_normalize(v);
    auto twice = l2_normalize(once);
    for (std::size_t i = 0; i < v.size(); ++i) CHECK(std::abs(once[i] - twice[i]) <= 1e-12);
    CHECK(std::abs(norm2(once) - 1.0) <= 1e-12);
  }
}

TEST_CASE("cosine_sim") {
  CHECK(cosine_sim(std::vector<double>{1, 0}, std::vector<double>{0, 1}) == 0.0);
  CHECK(cosine_sim(std::vector<double>{2, 0}, std::vector<double>{1, 0}) == 1.0);
  CHECK(cosine_sim(std::vector<double>{1, 1}, std::vector<double>{1, 0}) == doctest::Approx(0.70710678).epsilon(1e-6));
  CHECK(error_code_of([] { cosine_sim(std::vector<double>{0, 0}, std::vector<double>{1, 0}); }) ==
        ErrorCode::ZeroVector);
  CHECK(error_code_of([] { cosine_sim(std::vector<double>{1, 0, 0}, std::vector<double>{1, 0}); }) ==
        ErrorCode::DimensionMismatch);
}

TEST_CASE("cosine_sim is invariant to positive rescaling") {
  SeededRng rng(12);
  for (int trial = 0; trial < 500; ++trial) {
    const std::size_t n = 1 + rng.uniform_index(16);
    std::vector<double> a(n), b(n), sa(n), sb(n);
    const double la = rng.uniform(0.01, 100.0);
    const double lb = rng.uniform(0.01, 100.0);
    for (std::size_t i = 0; i < n; ++i) {
      a[i] = rng.normal();
      b[i] = rng.normal();
      sa[i] = la * a[i];
      sb[i] = lb * b[i];
    }
    const double c = cosine_sim(a, b);
    CHECK(c >= -1.0);
    CHECK(c <= 1.0);
    CHECK(std::abs(c - cosine_sim(sa, sb)) <= 1e-9);
  }
}

TEST_CASE("softmax_rows examples") {
  auto uniform = softmax_rows(DenseMatrix{{0, 0, 0}}, 3.7);
  for (std::size_t j = 0; j < 3; ++j) CHECK(uniform(0, j) == doctest::Approx(1.0 / 3.0).epsilon(1e-15));

  auto single = softmax_rows(DenseMatrix{{5}}, 1.0);
  CHECK(single(0, 0) == 1.0);

  auto two = softmax_rows(DenseMatrix{{1, 0}}, 1.0);
  const double e = std::numbers::e;
  CHECK(std::abs(two(0, 0) - e / (e + 1)) <= 1e-6);
  CHECK(std::abs(two(0, 0) - 0.731059) <= 1e-6);
  CHECK(std::abs(two(0, 1) - 0.268941) <= 1e-6);

  CHECK(error_code_of([] { softmax_rows(DenseMatrix{{1, 2}}, 0.0); }) == ErrorCode::NonPositiveTemperature);
  CHECK(error_code_of([] { softmax_rows(DenseMatrix{{1, 2}}, -1.0); }) == ErrorCode::NonPositiveTemperature);
}

TEST_CASE("softmax_rows stability and shift invariance") {
  SeededRng rng(13);
  for (int trial = 0; trial < 300; ++trial) {
    const std::size_t rows = 1 + rng.uniform_index(5);
    const std::size_t cols = 1 + rng.uniform_index(9);
    DenseMatrix logits(rows, cols);
    for (double& x : logits.data()) x = rng.uniform(-1e4, 1e4);
    const double tau = rng.uniform(0.01, 10.0);
    auto p = softmax_rows(logits, tau);
    DenseMatrix shifted = logits;
    for (std::size_t r = 0; r < rows; ++r) {
      const double shift = rng.uniform(-100.0, 100.0);
      for (double& x : shifted.row(r)) x += shift;
    }
    auto q = softmax_rows(shifted, tau);
    for (std::size_t r = 0; r < rows; ++r) {
      double s = 0.0;
      for (double x : p.row(r)) s += x;
      CHECK(std::abs(s - 1.0) <= 1e-9);
    }
    CHECK(max_abs_diff(p.matrix(), q.matrix()) < 1e-9);
  }
}

TEST_CASE("kl_divergence examples") {
  CHECK(kl_divergence(std::vector<double>{0.5, 0.5}, std::vector<double>{0.5, 0.5}) == 0.0);
  CHECK(std::abs(kl_divergence(std::vector<double>{1, 0}, std::vector<double>{0.5, 0.5}) - 0.693147) <= 1e-6);
  CHECK(kl_divergence(std::vector<double>{0.25, 0.75}, std::vector<double>{0.25, 0.75}) == 0.0);

  CHECK(error_code_of([] { kl_divergence(std::vector<double>{1}, std::vector<double>{0.5, 0.5}); }) ==
        ErrorCode::DimensionMismatch);
  CHECK(error_code_of([] { kl_divergence(std::vector<double>{0.7, 0.7}, std::vector<double>{0.5, 0.5}); }) ==
        ErrorCode::NotADistribution);
  CHECK(error_code_of([] { kl_divergence(std::vector<double>{1.5, -0.5}, std::vector<double>{0.5, 0.5}); }) ==
        ErrorCode::NotADistribution);
}

TEST_CASE("kl_divergence floors zero q entries") {
  const double kl = kl_divergence(std::vector<double>{0.5, 0.5}, std::vector<double>{1.0, 0.0});
  CHECK(std::isfinite(kl));
  CHECK(kl == doctest::Approx(0.5 * std::log(0.5) + 0.5 * (std::log(0.5) - std::log(1e-12))));
}

TEST_CASE("kl_divergence is nonnegative and vanishes on identical rows") {
  SeededRng rng(14);
  for (int trial = 0; trial < 1000; ++trial) {
    const std::size_t n = 1 + rng.uniform_index(12);
    auto p = mtkd::testing::random_distribution(rng, n);
    auto q = mtkd::testing::random_distribution(rng, n);
    CHECK(kl_divergence(p, q) >= -1e-12);
    CHECK(std::abs(kl_divergence(p, p)) <= 1e-12);
  }
}

TEST_CASE("pairwise_logits") {
  DenseMatrix eye{{1, 0}, {0, 1}};
  CHECK(pairwise_logits(eye, eye) == eye);
  CHECK(pairwise_logits(DenseMatrix{{1, 1}}, DenseMatrix{{2, 0}, {0, 3}}) == DenseMatrix{{2, 3}});

  auto empty = pairwise_logits(DenseMatrix(0, 4), DenseMatrix(5, 4));
  CHECK(empty.rows() == 0);
  CHECK(empty.cols() == 5);

  CHECK(error_code_of([] { pairwise_logits(DenseMatrix(2, 3), DenseMatrix(2, 4)); }) ==
        ErrorCode::DimensionMismatch);
}

TEST_CASE("ProbMatrix rejects non-stochastic rows") {
  CHECK(error_code_of([] { ProbMatrix(DenseMatrix{{0.5, 0.6}}); }) == ErrorCode::NotADistribution);
  CHECK(error_code_of([] { ProbMatrix(DenseMatrix{{std::nan(""), 1.0}}); }) == ErrorCode::NotADistribution);
  CHECK_NOTHROW(ProbMatrix(DenseMatrix{{0.25, 0.75}}));
}

TEST_CASE("SeededRng determinism and moments") {
  SeededRng a(42), b(42), c(43);
  for (int i = 0; i < 100; ++i) CHECK(a.next_u64() == b.next_u64());
  SeededRng a2(42);
  CHECK(a2.next_u64() != c.next_u64());

  // Reference values pin the generator so a silent algorithm change is caught.
  SeededRng pinned(0);
  CHECK(pinned.next_u64() == 0x99EC5F36CB75F2B4ULL);

  SeededRng rng(7);
  const int n = 200000;
  double sum = 0, sq = 0, usum = 0;
  for (int i = 0; i < n; ++i) {
    const double x = rng.normal();
    sum += x;
    sq += x * x;
    usum += rng.uniform();
  }
  CHECK(std::abs(sum / n) < 0.01);
  CHECK(std::abs(sq / n - 1.0) < 0.02);
  CHECK(std::abs(usum / n - 0.5) < 0.005);

  double bsum = 0;
  for (int i = 0; i < 20000; ++i) bsum += rng.beta(2.0, 5.0);
  CHECK(std::abs(bsum / 20000 - 2.0 / 7.0) < 0.01);

  SeededRng d1 = SeededRng(5).derive(3);
  SeededRng d2 = SeededRng(5).derive(3);
  SeededRng d3 = SeededRng(5).derive(4);
  CHECK(d1.next_u64() == d2.next_u64());
  CHECK(d1.next_u64() != d3.next_u64());
}
