#pragma once

#include <cstddef>
#include <span>
#include <vector>

#include "mtkd/numerics.hpp"
#include "mtkd/simplex.hpp"

namespace mtkd {

// One flattened gradient per teacher, all of the same length.
struct TeacherGradientSet {
  std::vector<std::vector<double>> g;
  std::vector<double> objectives;  // optional, one per teacher when present

  std::size_t size() const noexcept { return g.size(); }
  std::size_t dim() const noexcept { return g.empty() ? 0 : g.front().size(); }
  void validate() const;  // EmptyGradientSet, DimensionMismatch, NumericError
};

struct SimilarityScores {
  std::vector<double> r;
};

struct LsrWeights {
  SimplexWeights weights;
  bool degenerate = false;  // every score was zero; weights fell back to uniform
};

// alpha_k = r_k / sum_j r_j.
LsrWeights lsr_weights(const SimilarityScores& scores);

// Mean over the batch of max(0, cos(u_i, bank[y_i])).
double teacher_label_similarity(const DenseMatrix& teacher_image, std::span<const std::size_t> labels,
                                const DenseMatrix& bank);
// Soft-label form: mean over i of sum_c T_ic max(0, cos(u_i, bank[c])).
double teacher_label_similarity(const DenseMatrix& teacher_image, const DenseMatrix& targets, const DenseMatrix& bank);

struct MinNorm2 {
  double gamma = 0.5;  // weight on g1
  std::vector<double> d;
};

// Closest point to the origin on the segment [g1, g2].
MinNorm2 min_norm_2(std::span<const double> g1, std::span<const double> g2);

struct FrankWolfeOptions {
  std::size_t max_iter = 100;
  double tol = 1e-10;
  // Away steps let the iterate leave vertices it no longer needs, which gives
  // exact convergence on faces. false runs the textbook toward-vertex method.
  bool away_steps = true;
};

struct FrankWolfeResult {
  SimplexWeights weights;
  std::vector<double> d;  // sum_k alpha_k g_k
  double objective = 0.0;  // 0.5 |d|^2
  double gap = 0.0;        // <d, d - g_t> at the last check
  std::size_t iterations = 0;
  bool converged = false;
  std::vector<double> objective_history;  // starts with the uniform point
};

FrankWolfeResult frank_wolfe_min_norm(const TeacherGradientSet& set, FrankWolfeOptions options = {});

struct BruteForceResult {
  SimplexWeights weights;
  double objective = 0.0;
};

// Exhaustive search of the simplex lattice with the given step. K <= 4.
BruteForceResult brute_force_min_norm(const TeacherGradientSet& set, double grid_step);

struct ParetoCertificate {
  bool passes = false;
  bool stationary = false;    // |d| <= tol
  std::vector<double> slack;  // <d, g_k> - |d|^2
};

ParetoCertificate certify_pareto_stationarity(std::span<const double> d, const TeacherGradientSet& set, double tol);

SimplexWeights dsw_weights(const TeacherGradientSet& set);

}  // namespace mtkd
