#pragma once

#include <cmath>
#include <cstddef>
#include <cstdint>
#include <span>
#include <vector>

namespace finch {

// A distribution is accepted when its entries sum to 1 within this tolerance
// after construction.
inline constexpr double kProbabilityTolerance = 1e-9;
// Inputs whose sum is within this distance of 1 are renormalized on
// construction; anything further off is rejected.
inline constexpr double kRenormalizeTolerance = 1e-6;

/// Normalized probability vector over C >= 2 classes.
class CategoricalDistribution {
 public:
  explicit CategoricalDistribution(std::vector<double> probs);

  static CategoricalDistribution uniform(std::size_t n_classes);
  static CategoricalDistribution one_hot(std::size_t n_classes, std::size_t index);

  std::size_t size() const { return probs_.size(); }
  double operator[](std::size_t i) const { return probs_[i]; }
  std::span<const double> probs() const { return probs_; }

  /// Index of the largest entry; ties go to the lowest index.
  std::size_t argmax() const;

  bool operator==(const CategoricalDistribution&) const = default;

 private:
  std::vector<double> probs_;
};

/// Unnormalized log-scores; every entry must be finite.
class LogScoreVector {
 public:
  explicit LogScoreVector(std::vector<double> scores);

  std::size_t size() const { return scores_.size(); }
  std::span<const double> scores() const { return scores_; }

 private:
  std::vector<double> scores_;
};

CategoricalDistribution normalize_log_scores(const LogScoreVector& scores);

// Softmax that also accepts -inf entries (they map to probability 0) as long
// as at least one entry is finite. Used where log(0) legitimately appears,
// e.g. the log of a distribution with zero entries.
CategoricalDistribution softmax(std::span<const double> scores);

/// Shannon entropy in nats, with 0 ln 0 = 0.
double entropy(const CategoricalDistribution& p);

struct Top2Stats {
  double max_prob = 0.0;
  double margin = 0.0;
};

// Largest entry and its gap to the runner-up. Ties resolve by class index,
// so an exact tie yields margin 0.
Top2Stats top2_stats(const CategoricalDistribution& p);

// Elementwise natural log; zero entries become -inf.
std::vector<double> log_probs(const CategoricalDistribution& p);

double total_variation(const CategoricalDistribution& a, const CategoricalDistribution& b);

inline double sigmoid(double x) {
  if (x >= 0.0) {
    return 1.0 / (1.0 + std::exp(-x));
  }
  const double e = std::exp(x);
  return e / (1.0 + e);
}

inline double logit(double p) { return std::log(p) - std::log1p(-p); }

inline double softplus(double x) {
  return x > 0.0 ? x + std::log1p(std::exp(-x)) : std::log1p(std::exp(x));
}

inline double inverse_softplus(double y) { return y + std::log(-std::expm1(-y)); }

double log_sum_exp(std::span<const double> values);

// splitmix64 finalizer; derives independent stream seeds from a base seed.
std::uint64_t derive_seed(std::uint64_t seed, std::uint64_t stream);

}  // namespace finch
