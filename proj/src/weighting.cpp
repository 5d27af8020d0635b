#include "mtkd/weighting.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <string>

namespace mtkd {

SimplexWeights::SimplexWeights(std::vector<double> alpha) : alpha_(std::move(alpha)) {
  require(!alpha_.empty(), ErrorCode::InvalidSimplex, "simplex point needs at least one teacher");
  double sum = 0.0;
  for (double a : alpha_) {
    require(std::isfinite(a) && a >= 0.0, ErrorCode::InvalidSimplex, "negative or non-finite weight");
    sum += a;
  }
  require(std::abs(sum - 1.0) <= kSimplexTolerance, ErrorCode::InvalidSimplex,
          "weights sum to " + std::to_string(sum));
}

SimplexWeights SimplexWeights::uniform(std::size_t k) {
  require(k > 0, ErrorCode::InvalidSimplex, "uniform weights over zero teachers");
  return SimplexWeights(std::vector<double>(k, 1.0 / static_cast<double>(k)));
}

SimplexWeights SimplexWeights::vertex(std::size_t k, std::size_t index) {
  require(index < k, ErrorCode::InvalidSimplex, "vertex index out of range");
  std::vector<double> a(k, 0.0);
  a[index] = 1.0;
  return SimplexWeights(std::move(a));
}

void TeacherGradientSet::validate() const {
  require(!g.empty(), ErrorCode::EmptyGradientSet, "no teacher gradients");
  for (const auto& v : g) {
    require(v.size() == g.front().size(), ErrorCode::DimensionMismatch, "teacher gradients differ in length");
    for (double x : v) require(std::isfinite(x), ErrorCode::NumericError, "non-finite teacher gradient");
  }
  require(objectives.empty() || objectives.size() == g.size(), ErrorCode::DimensionMismatch,
          "objective count does not match gradient count");
}

LsrWeights lsr_weights(const SimilarityScores& scores) {
  require(!scores.r.empty(), ErrorCode::EmptyGradientSet, "no similarity scores");
  double sum = 0.0;
  for (double r : scores.r) {
    require(std::isfinite(r) && r >= 0.0, ErrorCode::NumericError, "similarity score must be finite and >= 0");
    sum += r;
  }
  if (sum <= 0.0) return {SimplexWeights::uniform(scores.r.size()), true};
  std::vector<double> alpha(scores.r.size());
  for (std::size_t k = 0; k < alpha.size(); ++k) alpha[k] = scores.r[k] / sum;
  return {SimplexWeights(std::move(alpha)), false};
}

namespace {

void require_unit_bank(const DenseMatrix& bank) {
  for (std::size_t c = 0; c < bank.rows(); ++c)
    require(std::abs(norm2(bank.row(c)) - 1.0) <= 1e-9, ErrorCode::NotUnitNorm,
            "class bank row " + std::to_string(c) + " is not unit norm");
}

}  // namespace

double teacher_label_similarity(const DenseMatrix& teacher_image, std::span<const std::size_t> labels,
                                const DenseMatrix& bank) {
  require(labels.size() == teacher_image.rows(), ErrorCode::ShapeMismatch, "one label per image row");
  require_unit_bank(bank);
  if (labels.empty()) return 0.0;
  double sum = 0.0;
  for (std::size_t i = 0; i < labels.size(); ++i) {
    require(labels[i] < bank.rows(), ErrorCode::LabelOutOfRange, "label outside the class bank");
    sum += std::max(0.0, cosine_sim(teacher_image.row(i), bank.row(labels[i])));
  }
  return sum / static_cast<double>(labels.size());
}

double teacher_label_similarity(const DenseMatrix& teacher_image, const DenseMatrix& targets, const DenseMatrix& bank) {
  require(targets.rows() == teacher_image.rows() && targets.cols() == bank.rows(), ErrorCode::ShapeMismatch,
          "targets must be B x N");
  require_unit_bank(bank);
  if (targets.rows() == 0) return 0.0;
  double sum = 0.0;
  for (std::size_t i = 0; i < targets.rows(); ++i)
    for (std::size_t c = 0; c < bank.rows(); ++c)
      if (targets(i, c) != 0.0) sum += targets(i, c) * std::max(0.0, cosine_sim(teacher_image.row(i), bank.row(c)));
  return sum / static_cast<double>(targets.rows());
}

namespace {

constexpr double kDegenerateSegment = 1e-18;

// gamma minimizing |gamma a + (1 - gamma) b|^2 over [0, 1], from inner products.
double segment_gamma(double aa, double ab, double bb) {
  const double denom = aa - 2.0 * ab + bb;
  if (denom < kDegenerateSegment) return 0.5;
  return std::clamp((bb - ab) / denom, 0.0, 1.0);
}

}  // namespace

MinNorm2 min_norm_2(std::span<const double> g1, std::span<const double> g2) {
  require(g1.size() == g2.size(), ErrorCode::DimensionMismatch, "min_norm_2 length mismatch");
  double diff_sq = 0.0;
  double num = 0.0;
  for (std::size_t i = 0; i < g1.size(); ++i) {
    const double diff = g1[i] - g2[i];
    diff_sq += diff * diff;
    num -= diff * g2[i];  // (g2 - g1) . g2
  }
  MinNorm2 out;
  out.gamma = diff_sq < kDegenerateSegment ? 0.5 : std::clamp(num / diff_sq, 0.0, 1.0);
  out.d.resize(g1.size());
  for (std::size_t i = 0; i < g1.size(); ++i) out.d[i] = out.gamma * g1[i] + (1.0 - out.gamma) * g2[i];
  return out;
}

namespace {

std::vector<std::vector<double>> gram_matrix(const TeacherGradientSet& set) {
  const std::size_t k = set.size();
  std::vector<std::vector<double>> m(k, std::vector<double>(k));
  for (std::size_t i = 0; i < k; ++i)
    for (std::size_t j = i; j < k; ++j) m[i][j] = m[j][i] = dot(set.g[i], set.g[j]);
  return m;
}

std::vector<double> combine(const TeacherGradientSet& set, std::span<const double> alpha) {
  std::vector<double> d(set.dim(), 0.0);
  for (std::size_t k = 0; k < set.size(); ++k)
    for (std::size_t i = 0; i < d.size(); ++i) d[i] += alpha[k] * set.g[k][i];
  return d;
}

// Clears rounding drift so the iterate is an exact simplex point.
void renormalize(std::vector<double>& alpha) {
  for (double& a : alpha) a = std::max(a, 0.0);
  const double sum = std::accumulate(alpha.begin(), alpha.end(), 0.0);
  for (double& a : alpha) a /= sum;
}

}  // namespace

FrankWolfeResult frank_wolfe_min_norm(const TeacherGradientSet& set, FrankWolfeOptions options) {
  set.validate();
  require(options.max_iter >= 1, ErrorCode::InvalidConfig, "max_iter must be at least 1");
  const std::size_t K = set.size();
  const auto M = gram_matrix(set);

  std::vector<double> alpha(K, 1.0 / static_cast<double>(K));
  std::vector<double> gd(K);  // <g_k, d>
  double dd = 0.0;
  auto refresh = [&] {
    dd = 0.0;
    for (std::size_t k = 0; k < K; ++k) {
      gd[k] = 0.0;
      for (std::size_t j = 0; j < K; ++j) gd[k] += M[k][j] * alpha[j];
      dd += alpha[k] * gd[k];
    }
  };
  auto toward_vertex = [&] {
    std::size_t t = 0;
    for (std::size_t k = 1; k < K; ++k)
      if (gd[k] < gd[t]) t = k;
    return t;
  };

  FrankWolfeResult out;
  refresh();
  out.objective_history.push_back(0.5 * dd);
  while (true) {
    const std::size_t t = toward_vertex();
    out.gap = dd - gd[t];
    if (out.gap <= options.tol) {
      out.converged = true;
      break;
    }
    if (out.iterations == options.max_iter) break;

    std::size_t a = K;
    double away_gap = -std::numeric_limits<double>::infinity();
    if (options.away_steps) {
      for (std::size_t k = 0; k < K; ++k)
        if (alpha[k] > 0.0 && (a == K || gd[k] > gd[a])) a = k;
      away_gap = gd[a] - dd;
    }

    if (!options.away_steps || out.gap >= away_gap || alpha[a] >= 1.0) {
      const double gamma = segment_gamma(dd, gd[t], M[t][t]);
      for (double& x : alpha) x *= gamma;
      alpha[t] += 1.0 - gamma;
    } else {
      // Move d away from g_a: alpha <- (1 + mu) alpha - mu e_a.
      const double mu_max = alpha[a] / (1.0 - alpha[a]);
      const double denom = dd - 2.0 * gd[a] + M[a][a];
      const double mu = denom < kDegenerateSegment ? mu_max : std::clamp((gd[a] - dd) / denom, 0.0, mu_max);
      for (double& x : alpha) x *= 1.0 + mu;
      alpha[a] -= mu;
      if (mu == mu_max) alpha[a] = 0.0;
    }
    renormalize(alpha);
    refresh();
    ++out.iterations;
    out.objective_history.push_back(0.5 * dd);
  }

  out.weights = SimplexWeights(alpha);
  out.d = combine(set, alpha);
  out.objective = 0.5 * dot(out.d, out.d);
  return out;
}

BruteForceResult brute_force_min_norm(const TeacherGradientSet& set, double grid_step) {
  set.validate();
  require(set.size() <= 4, ErrorCode::TooManyTeachers, "brute force is limited to 4 teachers");
  require(std::isfinite(grid_step) && grid_step > 0.0 && grid_step <= 1.0, ErrorCode::InvalidGrid,
          "grid step must lie in (0, 1]");
  const double steps_real = std::round(1.0 / grid_step);
  require(std::abs(steps_real * grid_step - 1.0) <= 1e-9, ErrorCode::InvalidGrid, "grid step must divide 1");
  const auto n = static_cast<std::size_t>(steps_real);
  const std::size_t K = set.size();
  const auto M = gram_matrix(set);

  std::vector<std::size_t> counts(K, 0);
  std::vector<double> alpha(K);
  std::vector<double> best_alpha;
  double best = std::numeric_limits<double>::infinity();

  // Enumerates every composition of n into K nonnegative parts.
  auto visit = [&](auto& self, std::size_t k, std::size_t remaining) -> void {
    if (k + 1 == K) {
      counts[k] = remaining;
      for (std::size_t j = 0; j < K; ++j) alpha[j] = static_cast<double>(counts[j]) / static_cast<double>(n);
      double q = 0.0;
      for (std::size_t i = 0; i < K; ++i)
        for (std::size_t j = 0; j < K; ++j) q += alpha[i] * alpha[j] * M[i][j];
      if (0.5 * q < best) {
        best = 0.5 * q;
        best_alpha = alpha;
      }
      return;
    }
    for (std::size_t c = 0; c <= remaining; ++c) {
      counts[k] = c;
      self(self, k + 1, remaining - c);
    }
  };
  visit(visit, 0, n);
  return {SimplexWeights(best_alpha), best};
}

ParetoCertificate certify_pareto_stationarity(std::span<const double> d, const TeacherGradientSet& set, double tol) {
  ParetoCertificate out;
  const double dd = dot(d, d);
  out.stationary = std::sqrt(dd) <= tol;
  out.passes = true;
  for (const auto& g : set.g) {
    const double slack = dot(d, g) - dd;
    out.slack.push_back(slack);
    if (slack < -tol) out.passes = false;
  }
  if (out.stationary) out.passes = true;
  return out;
}

SimplexWeights dsw_weights(const TeacherGradientSet& set) { return frank_wolfe_min_norm(set).weights; }

}  // namespace mtkd
