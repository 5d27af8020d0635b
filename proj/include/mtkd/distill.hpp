#pragma once

#include <cstddef>
#include <span>
#include <string_view>
#include <vector>

#include "mtkd/contrastive.hpp"
#include "mtkd/numerics.hpp"
#include "mtkd/rng.hpp"
#include "mtkd/simplex.hpp"

namespace mtkd {

// Frozen teacher view of one batch. Distributions are computed once at tau
// and never receive gradient.
struct TeacherOutputs {
  DenseMatrix image_features;  // B x d
  DenseMatrix text_features;   // B x d (in-batch) or N x d (class bank)
  ProbMatrix i2t;              // B x N
  ProbMatrix t2i;              // N x B
  double tau = 4.0;
};

TeacherOutputs make_teacher_outputs(DenseMatrix image_features, DenseMatrix text_features, double tau,
                                    ContrastMode mode = ContrastMode::ClassBank);

// Row-mean KL(teacher || student) in both directions. Gradients are taken
// w.r.t. the raw student similarities s = U W^T (so the 1/tau of the student
// softmax is included): grad_sim_i2t is B x N, grad_sim_t2i is N x B and
// indexes s^T.
struct KlPairLoss {
  double l_i2t = 0.0;
  double l_t2i = 0.0;
  DenseMatrix grad_sim_i2t;
  DenseMatrix grad_sim_t2i;
};

KlPairLoss kl_pair_loss(const TeacherOutputs& teacher, const ProbMatrix& student_i2t, const ProbMatrix& student_t2i,
                        double tau_student);

// Per-direction weights inside one teacher's KL term. (1, 1) is the plain sum.
struct DirectionWeights {
  double i2t = 1.0;
  double t2i = 1.0;
};

struct KlFeatureLoss {
  double l_i2t = 0.0;
  double l_t2i = 0.0;
  DenseMatrix grad_U;  // of w.i2t * l_i2t + w.t2i * l_t2i
  DenseMatrix grad_W;
};

// kl_pair_loss composed with the student distributions of (U, W) at
// tau_student and pulled back to the student features.
KlFeatureLoss kl_feature_loss(const TeacherOutputs& teacher, const DenseMatrix& U, const DenseMatrix& W,
                              double tau_student, ContrastMode mode, DirectionWeights weights = {});

// Logit-space gradients of a single row, used to check that soft-target cross
// entropy and KL share gradients. The CE route goes through the explicit
// softmax Jacobian; the KL route is the closed form p_student - p_teacher.
double soft_cross_entropy(std::span<const double> p_teacher, std::span<const double> p_student);
std::vector<double> cross_entropy_logit_grad(std::span<const double> p_teacher, std::span<const double> p_student);
std::vector<double> kl_logit_grad(std::span<const double> p_teacher, std::span<const double> p_student);

struct MseAlignResult {
  double value = 0.0;
  double image_term = 0.0;
  double text_term = 0.0;
  DenseMatrix grad_u;  // w.r.t. student image features
  DenseMatrix grad_w;  // w.r.t. student text features
};

// mean((u_S - u_T)^2) + mean((w_S - w_T)^2), means over all entries.
MseAlignResult mse_align(const DenseMatrix& u_teacher, const DenseMatrix& u_student, const DenseMatrix& w_teacher,
                         const DenseMatrix& w_student);

// sum_k lambda_k * features[k]; all matrices must share a shape.
DenseMatrix weighted_feature_target(std::span<const DenseMatrix> features, const SimplexWeights& lambda);

// Fixed map from student to teacher feature dimension: x -> x P^T with P
// d_teacher x d_student. Identity (no matrix) when the dims agree.
class FeatureProjection {
 public:
  FeatureProjection() = default;
  static FeatureProjection make(std::size_t student_dim, std::size_t teacher_dim, SeededRng& rng);

  bool is_identity() const noexcept { return matrix_.empty(); }
  std::size_t student_dim() const noexcept { return student_dim_; }
  std::size_t teacher_dim() const noexcept { return teacher_dim_; }
  const DenseMatrix& matrix() const noexcept { return matrix_; }

  DenseMatrix apply(const DenseMatrix& x) const;
  DenseMatrix pull_back(const DenseMatrix& grad) const;

 private:
  std::size_t student_dim_ = 0;
  std::size_t teacher_dim_ = 0;
  DenseMatrix matrix_;
};

// Component ratios gamma = clip : kl : mse.
struct LossRatios {
  double clip = 1.0;
  double kl = 1.0;
  double mse = 1.0;

  void validate() const;  // NonPositiveRatio unless every entry is finite and > 0
  bool operator==(const LossRatios&) const = default;
};

LossRatios parse_loss_ratios(std::string_view text);  // "1:0.5:1"

struct LossParts {
  double l_clip = 0.0;
  std::vector<double> l_kl_i2t;  // one per teacher
  std::vector<double> l_kl_t2i;
  double l_mse = 0.0;
};

struct LossBreakdown {
  double l_clip = 0.0;
  std::vector<double> l_kl_i2t;
  std::vector<double> l_kl_t2i;
  double l_kl = 0.0;  // sum_k lambda_k (w.i2t l_i2t,k + w.t2i l_t2i,k)
  double l_mse = 0.0;
  double total = 0.0;
  LossRatios ratios;
  DirectionWeights directions;
  SimplexWeights lambda;

  double recompute_total() const;
};

// total = gamma_kl * l_kl + gamma_clip * l_clip + gamma_mse * l_mse.
// K = 0 (no teachers) is allowed with an empty lambda and contributes no KL.
LossBreakdown total_loss(const LossParts& parts, const LossRatios& ratios, const SimplexWeights& lambda,
                         DirectionWeights directions = {});

}  // namespace mtkd
