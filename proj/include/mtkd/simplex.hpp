#pragma once

#include <cstddef>
#include <span>
#include <vector>

namespace mtkd {

inline constexpr double kSimplexTolerance = 1e-9;

// Point on the probability simplex over K teachers. Construction validates
// alpha >= 0 and sum(alpha) = 1 within kSimplexTolerance (InvalidSimplex).
class SimplexWeights {
 public:
  SimplexWeights() = default;
  explicit SimplexWeights(std::vector<double> alpha);

  static SimplexWeights uniform(std::size_t k);
  static SimplexWeights vertex(std::size_t k, std::size_t index);

  std::size_t size() const noexcept { return alpha_.size(); }
  double operator[](std::size_t k) const noexcept { return alpha_[k]; }
  std::span<const double> alpha() const noexcept { return alpha_; }

  bool operator==(const SimplexWeights&) const = default;

 private:
  std::vector<double> alpha_;
};

}  // namespace mtkd
