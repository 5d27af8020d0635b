#include <cmath>
#include <numbers>
#include <numeric>

#include "doctest.h"
#include "mtkd/contrastive.hpp"
#include "test_support.hpp"

using namespace mtkd;
using mtkd::testing::central_differences;
using mtkd::testing::error_code_of;
using mtkd::testing::random_unit_rows;

namespace {

// Direct evaluation of the symmetric contrastive loss from its definition,
// written independently of the library (no softmax_rows, no matrix helpers).
double reference_clip_loss(const std::vector<double>& u, const std::vector<double>& w, std::size_t B,
                           std::size_t N, std::size_t d, const std::vector<std::size_t>& labels, double tau) {
  auto sim = [&](std::size_t i, std::size_t j) {
    double s = 0.0;
    for (std::size_t k = 0; k < d; ++k) s += u[i * d + k] * w[j * d + k];
    return s / tau;
  };
  double i2t = 0.0, t2i = 0.0;
  for (std::size_t i = 0; i < B; ++i) {
    double z = 0.0;
    for (std::size_t j = 0; j < N; ++j) z += std::exp(sim(i, j));
    i2t += -(sim(i, labels[i]) - std::log(z));
    double zt = 0.0;
    for (std::size_t m = 0; m < B; ++m) zt += std::exp(sim(m, labels[i]));
    t2i += -(sim(i, labels[i]) - std::log(zt));
  }
  return 0.5 * (i2t + t2i) / static_cast<double>(B);
}

}  // namespace

TEST_CASE("image_to_text_probs examples") {
  DenseMatrix one{{1.0, 0.0}};
  auto p = image_to_text_probs({one, one, 0.7});
  CHECK(p(0, 0) == 1.0);

  DenseMatrix eye{{1, 0}, {0, 1}};
  auto q = image_to_text_probs({eye, eye, 1.0, ContrastMode::InBatch});
  const double e = std::numbers::e;
  CHECK(std::abs(q(0, 0) - e / (e + 1)) <= 1e-6);
  CHECK(std::abs(q(0, 1) - 1 / (e + 1)) <= 1e-6);
  CHECK(std::abs(q(1, 0) - 1 / (e + 1)) <= 1e-6);
  CHECK(std::abs(q(1, 1) - e / (e + 1)) <= 1e-6);

  SeededRng rng(1);
  DenseMatrix U = random_unit_rows(rng, 4, 3), W = random_unit_rows(rng, 6, 3);
  auto flat = image_to_text_probs({U, W, 1e6});
  for (std::size_t i = 0; i < 4; ++i)
    for (std::size_t j = 0; j < 6; ++j) CHECK(std::abs(flat(i, j) - 1.0 / 6.0) <= 1e-5);
}

TEST_CASE("text_to_image_probs examples") {
  SeededRng rng(2);
  DenseMatrix U = random_unit_rows(rng, 5, 4);
  auto a = image_to_text_probs({U, U, 0.5, ContrastMode::InBatch});
  auto b = text_to_image_probs({U, U, 0.5, ContrastMode::InBatch});
  CHECK(max_abs_diff(a.matrix(), b.matrix()) == 0.0);

  DenseMatrix one{{0.0, 1.0}};
  CHECK(text_to_image_probs({one, one, 2.0, ContrastMode::InBatch})(0, 0) == 1.0);

  DenseMatrix W = random_unit_rows(rng, 7, 4);
  auto t = text_to_image_probs({U, W, 0.3});
  CHECK(t.rows() == 7);
  CHECK(t.cols() == 5);
  for (std::size_t r = 0; r < t.rows(); ++r) {
    double s = 0.0;
    for (double x : t.row(r)) s += x;
    CHECK(std::abs(s - 1.0) <= 1e-9);
  }
}

TEST_CASE("contrastive distributions compose softmax_rows and pairwise_logits") {
  SeededRng rng(3);
  for (int trial = 0; trial < 50; ++trial) {
    DenseMatrix U = random_unit_rows(rng, 1 + rng.uniform_index(6), 5);
    DenseMatrix W = random_unit_rows(rng, 1 + rng.uniform_index(6), 5);
    const double tau = rng.uniform(0.05, 5.0);
    ContrastiveBatch batch{U, W, tau};
    CHECK(max_abs_diff(image_to_text_probs(batch).matrix(), softmax_rows(pairwise_logits(U, W), tau).matrix()) < 1e-12);
    CHECK(max_abs_diff(text_to_image_probs(batch).matrix(),
                       softmax_rows(pairwise_logits(U, W).transposed(), tau).matrix()) < 1e-12);
  }
}

TEST_CASE("batch validation") {
  DenseMatrix unit{{1.0, 0.0}};
  DenseMatrix not_unit{{2.0, 0.0}};
  DenseMatrix wide{{1.0, 0.0, 0.0}};
  CHECK(error_code_of([&] { image_to_text_probs({unit, unit, 0.0}); }) == ErrorCode::NonPositiveTemperature);
  CHECK(error_code_of([&] { image_to_text_probs({not_unit, unit, 1.0}); }) == ErrorCode::NotUnitNorm);
  CHECK(error_code_of([&] { image_to_text_probs({unit, wide, 1.0}); }) == ErrorCode::DimensionMismatch);
  DenseMatrix two{{1.0, 0.0}, {0.0, 1.0}};
  CHECK(error_code_of([&] { image_to_text_probs({unit, two, 1.0, ContrastMode::InBatch}); }) ==
        ErrorCode::ShapeMismatch);
}

TEST_CASE("clip_loss examples") {
  SUBCASE("identical rows give ln B") {
    DenseMatrix same(4, 3);
    for (std::size_t i = 0; i < 4; ++i) same(i, 1) = 1.0;
    std::vector<std::size_t> labels{0, 1, 2, 3};
    auto r = clip_loss({same, same, 4.0, ContrastMode::InBatch}, labels);
    CHECK(std::abs(r.value - std::log(4.0)) <= 1e-9);
  }
  SUBCASE("orthonormal pairs at low temperature") {
    DenseMatrix eye{{1, 0}, {0, 1}};
    std::vector<std::size_t> labels{0, 1};
    auto r = clip_loss({eye, eye, 0.05, ContrastMode::InBatch}, labels);
    CHECK(r.value < 1e-8);
    CHECK(r.value >= 0.0);
  }
  SUBCASE("label out of range") {
    DenseMatrix eye{{1, 0}, {0, 1}};
    std::vector<std::size_t> labels{0, 2};
    CHECK(error_code_of([&] { clip_loss({eye, eye, 1.0}, labels); }) == ErrorCode::LabelOutOfRange);
  }
}

TEST_CASE("clip_loss gradients match finite differences (B=3, d=4)") {
  SeededRng rng(4);
  mtkd::testing::GradCheckSummary summary;
  for (int trial = 0; trial < 6; ++trial) {
    const bool in_batch = trial % 2 == 0;
    const std::size_t B = 3, d = 4, N = in_batch ? 3 : 5;
    DenseMatrix U = random_unit_rows(rng, B, d), W = random_unit_rows(rng, N, d);
    std::vector<std::size_t> labels(B);
    for (std::size_t i = 0; i < B; ++i) labels[i] = in_batch ? i : rng.uniform_index(N);
    const double tau = rng.uniform(0.2, 4.0);
    auto r = clip_loss({U, W, tau, in_batch ? ContrastMode::InBatch : ContrastMode::ClassBank}, labels);
    CHECK(std::abs(r.value - reference_clip_loss(U.values(), W.values(), B, N, d, labels, tau)) <= 1e-12);

    auto num_u = central_differences(U.values(), [&](const std::vector<double>& u) {
      return reference_clip_loss(u, W.values(), B, N, d, labels, tau);
    });
    auto num_w = central_differences(W.values(), [&](const std::vector<double>& w) {
      return reference_clip_loss(U.values(), w, B, N, d, labels, tau);
    });
    mtkd::testing::accumulate(summary, r.grad_U.values(), num_u);
    mtkd::testing::accumulate(summary, r.grad_W.values(), num_w);
  }
  CHECK(summary.pass_fraction() >= 0.99);
}

TEST_CASE("soft targets reduce to hard labels and interpolate linearly") {
  SeededRng rng(5);
  DenseMatrix U = random_unit_rows(rng, 4, 3), W = random_unit_rows(rng, 5, 3);
  std::vector<std::size_t> a{0, 1, 2, 3}, b{4, 3, 2, 1};
  ContrastiveBatch batch{U, W, 0.5};
  auto ha = clip_loss(batch, a);
  auto hb = clip_loss(batch, b);
  CHECK(clip_loss_soft(batch, one_hot(a, 5)).value == ha.value);

  DenseMatrix mixed = one_hot(a, 5);
  mixed *= 0.3;
  mixed.add_scaled(one_hot(b, 5), 0.7);
  auto soft = clip_loss_soft(batch, mixed);
  CHECK(std::abs(soft.value - (0.3 * ha.value + 0.7 * hb.value)) <= 1e-12);

  DenseMatrix bad = one_hot(a, 5);
  bad *= 0.5;
  CHECK(error_code_of([&] { clip_loss_soft(batch, bad); }) == ErrorCode::NotADistribution);
}

TEST_CASE("clip_loss is invariant under a common permutation") {
  SeededRng rng(6);
  for (int trial = 0; trial < 40; ++trial) {
    const std::size_t B = 2 + rng.uniform_index(6);
    DenseMatrix U = random_unit_rows(rng, B, 4), W = random_unit_rows(rng, B, 4);
    std::vector<std::size_t> labels(B), perm(B);
    std::iota(labels.begin(), labels.end(), 0);
    std::iota(perm.begin(), perm.end(), 0);
    for (std::size_t i = B; i > 1; --i) std::swap(perm[i - 1], perm[rng.uniform_index(i)]);

    // In-batch: pairs move together, labels stay the identity.
    DenseMatrix Up = gather_rows(U, perm), Wp = gather_rows(W, perm);
    auto base = clip_loss({U, W, 0.7, ContrastMode::InBatch}, labels);
    auto permuted = clip_loss({Up, Wp, 0.7, ContrastMode::InBatch}, labels);
    CHECK(std::abs(base.value - permuted.value) <= 1e-12);
    CHECK(base.value >= 0.0);

    // Class bank: image rows and their labels move together.
    DenseMatrix bank = random_unit_rows(rng, 3, 4);
    std::vector<std::size_t> y(B), yp(B);
    for (auto& v : y) v = rng.uniform_index(3);
    for (std::size_t i = 0; i < B; ++i) yp[i] = y[perm[i]];
    auto bb = clip_loss({U, bank, 0.7}, y);
    auto bp = clip_loss({Up, bank, 0.7}, yp);
    CHECK(std::abs(bb.value - bp.value) <= 1e-12);
  }
}

TEST_CASE("clip_loss approaches zero for separated pairs at small tau") {
  // Diagonal similarity 1, off-diagonal -1 (antipodal pair).
  DenseMatrix U{{1, 0}, {-1, 0}};
  std::vector<std::size_t> labels{0, 1};
  double previous = 1e9;
  for (double tau : {1.0, 0.3, 0.1, 0.03}) {
    auto r = clip_loss({U, U, tau, ContrastMode::InBatch}, labels);
    CHECK(r.value < previous);
    previous = r.value;
  }
  CHECK(previous < 1e-20);
}

TEST_CASE("classify") {
  DenseMatrix bank{{1, 0, 0}, {0, 1, 0}, {0, 0, 1}};
  DenseMatrix U{{0, 0, 1}};
  auto c = classify(U, bank, 4.0);
  CHECK(c.labels[0] == 2);

  DenseMatrix single{{0.6, 0.8, 0.0}};
  auto s = classify(U, single, 1.0);
  CHECK(s.labels[0] == 0);
  CHECK(s.max_probability[0] == 1.0);

  DenseMatrix tie_bank{{1, 0}, {1, 0}};
  DenseMatrix u{{1, 0}};
  CHECK(classify(u, tie_bank, 1.0).labels[0] == 0);

  CHECK(error_code_of([&] { classify(U, DenseMatrix(0, 3), 1.0); }) == ErrorCode::EmptyBank);
}

TEST_CASE("classify is invariant to tau") {
  SeededRng rng(7);
  for (int trial = 0; trial < 50; ++trial) {
    DenseMatrix U = random_unit_rows(rng, 8, 6), bank = random_unit_rows(rng, 5, 6);
    auto a = classify(U, bank, 0.5).labels;
    CHECK(classify(U, bank, 4.0).labels == a);
    CHECK(classify(U, bank, 100.0).labels == a);
  }
}
