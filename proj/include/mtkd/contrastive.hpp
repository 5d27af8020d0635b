#pragma once

#include <cstddef>
#include <span>
#include <vector>

#include "mtkd/numerics.hpp"

namespace mtkd {

// InBatch: W holds the B paired text features, label i is row i.
// ClassBank: W holds N cached class vectors, labels are class ids.
enum class ContrastMode { InBatch, ClassBank };

struct ContrastiveBatch {
  const DenseMatrix& image_features;  // U, B x d, unit rows
  const DenseMatrix& text_features;   // W, B x d or N x d, unit rows
  double tau;
  ContrastMode mode = ContrastMode::ClassBank;

  void validate() const;
};

// Row i = softmax_j(U_i . W_j / tau); B x N.
ProbMatrix image_to_text_probs(const ContrastiveBatch& batch);
// Row j = softmax_i(W_j . U_i / tau); N x B.
ProbMatrix text_to_image_probs(const ContrastiveBatch& batch);

struct LossValueWithGrad {
  double value = 0.0;
  DenseMatrix grad_U;
  DenseMatrix grad_W;
};

struct ClipLossResult : LossValueWithGrad {
  double image_to_text_ce = 0.0;
  double text_to_image_ce = 0.0;
};

// value = 1/2 (CE_i2t + CE_t2i), where for sample i with target row T_i over
// the N text rows:
//   CE_i2t = -1/B sum_i sum_j T_ij log p_i2t[i][j]
//   CE_t2i = -1/B sum_i sum_j T_ij log p_t2i[j][i]
// Hard labels are the one-hot special case.
ClipLossResult clip_loss(const ContrastiveBatch& batch, std::span<const std::size_t> labels);
ClipLossResult clip_loss_soft(const ContrastiveBatch& batch, const DenseMatrix& targets);

DenseMatrix one_hot(std::span<const std::size_t> labels, std::size_t num_classes);

struct Classification {
  std::vector<std::size_t> labels;
  std::vector<double> max_probability;
};

// argmax over the image-to-text row; ties go to the lowest class index.
Classification classify(const DenseMatrix& U, const DenseMatrix& bank, double tau);

}  // namespace mtkd
