#include "mtkd/contrastive.hpp"

#include <cmath>
#include <string>

namespace mtkd {

namespace {

constexpr double kUnitTolerance = 1e-9;

void require_unit_rows(const DenseMatrix& m, const char* name) {
  for (std::size_t r = 0; r < m.rows(); ++r) {
    const double n = norm2(m.row(r));
    require(std::abs(n - 1.0) <= kUnitTolerance, ErrorCode::NotUnitNorm,
            std::string(name) + " row " + std::to_string(r) + " is not unit norm");
  }
}

double safe_log(double p) { return std::log(std::max(p, kKlFloor)); }

}  // namespace

void ContrastiveBatch::validate() const {
  require(tau > 0.0 && std::isfinite(tau), ErrorCode::NonPositiveTemperature, "tau = " + std::to_string(tau));
  require(image_features.cols() == text_features.cols(), ErrorCode::DimensionMismatch,
          "image/text feature dims differ");
  if (mode == ContrastMode::InBatch)
    require(image_features.rows() == text_features.rows(), ErrorCode::ShapeMismatch,
            "in-batch mode needs as many text rows as image rows");
  require_unit_rows(image_features, "image_features");
  require_unit_rows(text_features, "text_features");
}

ProbMatrix image_to_text_probs(const ContrastiveBatch& batch) {
  batch.validate();
  return softmax_rows(pairwise_logits(batch.image_features, batch.text_features), batch.tau);
}

ProbMatrix text_to_image_probs(const ContrastiveBatch& batch) {
  batch.validate();
  return softmax_rows(pairwise_logits(batch.text_features, batch.image_features), batch.tau);
}

DenseMatrix one_hot(std::span<const std::size_t> labels, std::size_t num_classes) {
  DenseMatrix t(labels.size(), num_classes);
  for (std::size_t i = 0; i < labels.size(); ++i) {
    require(labels[i] < num_classes, ErrorCode::LabelOutOfRange,
            "label " + std::to_string(labels[i]) + " >= " + std::to_string(num_classes));
    t(i, labels[i]) = 1.0;
  }
  return t;
}

ClipLossResult clip_loss(const ContrastiveBatch& batch, std::span<const std::size_t> labels) {
  require(labels.size() == batch.image_features.rows(), ErrorCode::ShapeMismatch, "one label per image row");
  return clip_loss_soft(batch, one_hot(labels, batch.text_features.rows()));
}

ClipLossResult clip_loss_soft(const ContrastiveBatch& batch, const DenseMatrix& targets) {
  const DenseMatrix& U = batch.image_features;
  const DenseMatrix& W = batch.text_features;
  const std::size_t B = U.rows();
  const std::size_t N = W.rows();
  require(targets.rows() == B && targets.cols() == N, ErrorCode::ShapeMismatch, "targets must be B x N");
  for (std::size_t i = 0; i < B; ++i) {
    double s = 0.0;
    for (double t : targets.row(i)) {
      require(t >= 0.0, ErrorCode::NotADistribution, "negative target weight");
      s += t;
    }
    require(std::abs(s - 1.0) <= kRowSumTolerance, ErrorCode::NotADistribution,
            "target row " + std::to_string(i) + " does not sum to 1");
  }
  ProbMatrix p_i2t = image_to_text_probs(batch);
  ProbMatrix p_t2i = text_to_image_probs(batch);

  ClipLossResult out;
  if (B == 0) {
    out.grad_U = DenseMatrix(0, U.cols());
    out.grad_W = DenseMatrix(N, W.cols());
    return out;
  }
  const double inv_b = 1.0 / static_cast<double>(B);

  // Column mass c_j = sum_i T_ij is the weight of text row j in the t2i term.
  std::vector<double> column_mass(N, 0.0);
  for (std::size_t i = 0; i < B; ++i)
    for (std::size_t j = 0; j < N; ++j) column_mass[j] += targets(i, j);

  // grad of the loss w.r.t. the raw similarity s_ij = U_i . W_j
  DenseMatrix grad_sim(B, N);
  for (std::size_t i = 0; i < B; ++i) {
    for (std::size_t j = 0; j < N; ++j) {
      const double t = targets(i, j);
      if (t != 0.0) {
        out.image_to_text_ce -= t * safe_log(p_i2t(i, j));
        out.text_to_image_ce -= t * safe_log(p_t2i(j, i));
      }
      const double d_i2t = p_i2t(i, j) - t;
      const double d_t2i = column_mass[j] * p_t2i(j, i) - t;
      grad_sim(i, j) = 0.5 * inv_b * (d_i2t + d_t2i) / batch.tau;
    }
  }
  out.image_to_text_ce *= inv_b;
  out.text_to_image_ce *= inv_b;
  out.value = 0.5 * (out.image_to_text_ce + out.text_to_image_ce);
  out.grad_U = matmul(grad_sim, W);
  out.grad_W = matmul_at_b(grad_sim, U);
  return out;
}

Classification classify(const DenseMatrix& U, const DenseMatrix& bank, double tau) {
  require(bank.rows() > 0, ErrorCode::EmptyBank, "class bank has no rows");
  ContrastiveBatch batch{U, bank, tau, ContrastMode::ClassBank};
  ProbMatrix p = image_to_text_probs(batch);
  Classification out;
  out.labels.resize(U.rows());
  out.max_probability.resize(U.rows());
  for (std::size_t i = 0; i < U.rows(); ++i) {
    std::size_t best = 0;
    for (std::size_t j = 1; j < bank.rows(); ++j)
      if (p(i, j) > p(i, best)) best = j;
    out.labels[i] = best;
    out.max_probability[i] = p(i, best);
  }
  return out;
}

}  // namespace mtkd
