#include "mtkd/distill.hpp"

#include <charconv>
#include <cmath>
#include <string>

namespace mtkd {

TeacherOutputs make_teacher_outputs(DenseMatrix image_features, DenseMatrix text_features, double tau,
                                    ContrastMode mode) {
  TeacherOutputs out;
  ContrastiveBatch batch{image_features, text_features, tau, mode};
  out.i2t = image_to_text_probs(batch);
  out.t2i = text_to_image_probs(batch);
  out.image_features = std::move(image_features);
  out.text_features = std::move(text_features);
  out.tau = tau;
  return out;
}

namespace {

// Row-mean KL(teacher || student) and its gradient w.r.t. the raw similarities
// feeding the student softmax at tau.
double row_mean_kl(const ProbMatrix& teacher, const ProbMatrix& student, double tau, DenseMatrix& grad) {
  grad = DenseMatrix(student.rows(), student.cols());
  if (student.rows() == 0) return 0.0;
  const double scale = 1.0 / (static_cast<double>(student.rows()) * tau);
  double total = 0.0;
  for (std::size_t r = 0; r < student.rows(); ++r) {
    total += kl_divergence(teacher.row(r), student.row(r));
    for (std::size_t c = 0; c < student.cols(); ++c) grad(r, c) = (student(r, c) - teacher(r, c)) * scale;
  }
  return total / static_cast<double>(student.rows());
}

}  // namespace

KlPairLoss kl_pair_loss(const TeacherOutputs& teacher, const ProbMatrix& student_i2t, const ProbMatrix& student_t2i,
                        double tau_student) {
  require(tau_student > 0.0 && std::isfinite(tau_student), ErrorCode::NonPositiveTemperature,
          "tau_student = " + std::to_string(tau_student));
  require(teacher.i2t.matrix().same_shape(student_i2t.matrix()), ErrorCode::ShapeMismatch,
          "teacher/student image-to-text shapes differ");
  require(teacher.t2i.matrix().same_shape(student_t2i.matrix()), ErrorCode::ShapeMismatch,
          "teacher/student text-to-image shapes differ");
  require(student_i2t.rows() == student_t2i.cols() && student_i2t.cols() == student_t2i.rows(),
          ErrorCode::ShapeMismatch, "text-to-image must be the transpose shape of image-to-text");
  KlPairLoss out;
  out.l_i2t = row_mean_kl(teacher.i2t, student_i2t, tau_student, out.grad_sim_i2t);
  out.l_t2i = row_mean_kl(teacher.t2i, student_t2i, tau_student, out.grad_sim_t2i);
  return out;
}

KlFeatureLoss kl_feature_loss(const TeacherOutputs& teacher, const DenseMatrix& U, const DenseMatrix& W,
                              double tau_student, ContrastMode mode, DirectionWeights weights) {
  ContrastiveBatch batch{U, W, tau_student, mode};
  KlPairLoss pair = kl_pair_loss(teacher, image_to_text_probs(batch), text_to_image_probs(batch), tau_student);

  DenseMatrix grad_sim = pair.grad_sim_i2t;
  grad_sim *= weights.i2t;
  grad_sim.add_scaled(pair.grad_sim_t2i.transposed(), weights.t2i);

  KlFeatureLoss out;
  out.l_i2t = pair.l_i2t;
  out.l_t2i = pair.l_t2i;
  out.grad_U = matmul(grad_sim, W);
  out.grad_W = matmul_at_b(grad_sim, U);
  return out;
}

double soft_cross_entropy(std::span<const double> p_teacher, std::span<const double> p_student) {
  require(p_teacher.size() == p_student.size(), ErrorCode::DimensionMismatch, "cross entropy length mismatch");
  double ce = 0.0;
  for (std::size_t j = 0; j < p_teacher.size(); ++j)
    if (p_teacher[j] != 0.0) ce -= p_teacher[j] * std::log(std::max(p_student[j], kKlFloor));
  return ce;
}

std::vector<double> cross_entropy_logit_grad(std::span<const double> p_teacher, std::span<const double> p_student) {
  require(p_teacher.size() == p_student.size(), ErrorCode::DimensionMismatch, "cross entropy length mismatch");
  const std::size_t n = p_student.size();
  // dCE/dp_j = -t_j / p_j, then z-gradient = J^T dCE/dp with J = diag(p) - p p^T.
  std::vector<double> dp(n);
  for (std::size_t j = 0; j < n; ++j) dp[j] = -p_teacher[j] / std::max(p_student[j], kKlFloor);
  std::vector<double> grad(n, 0.0);
  for (std::size_t k = 0; k < n; ++k)
    for (std::size_t j = 0; j < n; ++j) {
      const double jac = (j == k ? p_student[j] : 0.0) - p_student[j] * p_student[k];
      grad[k] += jac * dp[j];
    }
  return grad;
}

std::vector<double> kl_logit_grad(std::span<const double> p_teacher, std::span<const double> p_student) {
  require(p_teacher.size() == p_student.size(), ErrorCode::DimensionMismatch, "kl length mismatch");
  std::vector<double> grad(p_student.size());
  for (std::size_t j = 0; j < grad.size(); ++j) grad[j] = p_student[j] - p_teacher[j];
  return grad;
}

namespace {

double mean_sq_block(const DenseMatrix& teacher, const DenseMatrix& student, DenseMatrix& grad) {
  require(teacher.same_shape(student), ErrorCode::ShapeMismatch,
          "mse blocks " + std::to_string(teacher.rows()) + "x" + std::to_string(teacher.cols()) + " vs " +
              std::to_string(student.rows()) + "x" + std::to_string(student.cols()));
  grad = DenseMatrix(student.rows(), student.cols());
  if (student.empty()) return 0.0;
  const double inv = 1.0 / static_cast<double>(student.size());
  double sum = 0.0;
  auto t = teacher.data();
  auto s = student.data();
  auto g = grad.data();
  for (std::size_t i = 0; i < s.size(); ++i) {
    const double diff = s[i] - t[i];
    sum += diff * diff;
    g[i] = 2.0 * diff * inv;
  }
  return sum * inv;
}

}  // namespace

MseAlignResult mse_align(const DenseMatrix& u_teacher, const DenseMatrix& u_student, const DenseMatrix& w_teacher,
                         const DenseMatrix& w_student) {
  MseAlignResult out;
  out.image_term = mean_sq_block(u_teacher, u_student, out.grad_u);
  out.text_term = mean_sq_block(w_teacher, w_student, out.grad_w);
  out.value = out.image_term + out.text_term;
  return out;
}

DenseMatrix weighted_feature_target(std::span<const DenseMatrix> features, const SimplexWeights& lambda) {
  require(!features.empty(), ErrorCode::InvalidSimplex, "no teacher features to average");
  require(features.size() == lambda.size(), ErrorCode::InvalidSimplex,
          std::to_string(lambda.size()) + " weights for " + std::to_string(features.size()) + " teachers");
  DenseMatrix out(features[0].rows(), features[0].cols());
  for (std::size_t k = 0; k < features.size(); ++k) out.add_scaled(features[k], lambda[k]);
  return out;
}

FeatureProjection FeatureProjection::make(std::size_t student_dim, std::size_t teacher_dim, SeededRng& rng) {
  require(student_dim > 0 && teacher_dim > 0, ErrorCode::InvalidConfig, "projection dims must be positive");
  FeatureProjection p;
  p.student_dim_ = student_dim;
  p.teacher_dim_ = teacher_dim;
  if (student_dim == teacher_dim) return p;
  // Gaussian entries with variance 1/d_student keep projected norms near 1.
  p.matrix_ = DenseMatrix(teacher_dim, student_dim);
  const double sd = 1.0 / std::sqrt(static_cast<double>(student_dim));
  for (double& x : p.matrix_.data()) x = rng.normal(0.0, sd);
  return p;
}

DenseMatrix FeatureProjection::apply(const DenseMatrix& x) const {
  require(x.cols() == student_dim_, ErrorCode::DimensionMismatch, "projection input dim");
  if (is_identity()) return x;
  DenseMatrix out(x.rows(), teacher_dim_);
  for (std::size_t r = 0; r < x.rows(); ++r)
    for (std::size_t t = 0; t < teacher_dim_; ++t) out(r, t) = dot(x.row(r), matrix_.row(t));
  return out;
}

DenseMatrix FeatureProjection::pull_back(const DenseMatrix& grad) const {
  require(grad.cols() == teacher_dim_, ErrorCode::DimensionMismatch, "projection gradient dim");
  if (is_identity()) return grad;
  return matmul(grad, matrix_);
}

void LossRatios::validate() const {
  for (double g : {clip, kl, mse})
    require(std::isfinite(g) && g > 0.0, ErrorCode::NonPositiveRatio, "loss ratio " + std::to_string(g));
}

LossRatios parse_loss_ratios(std::string_view text) {
  double values[3];
  const char* p = text.data();
  const char* end = text.data() + text.size();
  for (int i = 0; i < 3; ++i) {
    auto [next, ec] = std::from_chars(p, end, values[i]);
    require(ec == std::errc{} && next != p, ErrorCode::ConfigParseError,
            "loss ratios must look like clip:kl:mse, got '" + std::string(text) + "'");
    p = next;
    if (i < 2) {
      require(p != end && *p == ':', ErrorCode::ConfigParseError,
              "loss ratios must look like clip:kl:mse, got '" + std::string(text) + "'");
      ++p;
    }
  }
  require(p == end, ErrorCode::ConfigParseError, "trailing characters in '" + std::string(text) + "'");
  LossRatios r{values[0], values[1], values[2]};
  r.validate();
  return r;
}

double LossBreakdown::recompute_total() const {
  double kl = 0.0;
  for (std::size_t k = 0; k < lambda.size(); ++k)
    kl += lambda[k] * (directions.i2t * l_kl_i2t[k] + directions.t2i * l_kl_t2i[k]);
  return ratios.kl * kl + ratios.clip * l_clip + ratios.mse * l_mse;
}

LossBreakdown total_loss(const LossParts& parts, const LossRatios& ratios, const SimplexWeights& lambda,
                         DirectionWeights directions) {
  ratios.validate();
  require(std::isfinite(directions.i2t) && std::isfinite(directions.t2i) && directions.i2t >= 0.0 &&
              directions.t2i >= 0.0,
          ErrorCode::InvalidConfig, "direction weights must be finite and nonnegative");
  require(parts.l_kl_i2t.size() == lambda.size() && parts.l_kl_t2i.size() == lambda.size(),
          ErrorCode::InvalidSimplex,
          std::to_string(lambda.size()) + " teacher weights for " + std::to_string(parts.l_kl_i2t.size()) +
              " teacher losses");
  auto finite = [](double x) { return std::isfinite(x); };
  bool ok = finite(parts.l_clip) && finite(parts.l_mse);
  for (std::size_t k = 0; k < lambda.size(); ++k) ok = ok && finite(parts.l_kl_i2t[k]) && finite(parts.l_kl_t2i[k]);
  require(ok, ErrorCode::NumericError, "non-finite loss part");

  LossBreakdown out;
  out.l_clip = parts.l_clip;
  out.l_kl_i2t = parts.l_kl_i2t;
  out.l_kl_t2i = parts.l_kl_t2i;
  out.l_mse = parts.l_mse;
  out.ratios = ratios;
  out.directions = directions;
  out.lambda = lambda;
  for (std::size_t k = 0; k < lambda.size(); ++k)
    out.l_kl += lambda[k] * (directions.i2t * parts.l_kl_i2t[k] + directions.t2i * parts.l_kl_t2i[k]);
  out.total = ratios.kl * out.l_kl + ratios.clip * out.l_clip + ratios.mse * out.l_mse;
  return out;
}

}  // namespace mtkd
