#include "finch/core.hpp"

#include <algorithm>
#include <limits>
#include <numeric>
#include <string>

#include "finch/error.hpp"

namespace finch {

CategoricalDistribution::CategoricalDistribution(std::vector<double> probs)
    : probs_(std::move(probs)) {
  if (probs_.size() < 2) {
    throw InvalidInput("distribution needs at least 2 classes, got " +
                       std::to_string(probs_.size()));
  }
  double sum = 0.0;
  for (double p : probs_) {
    if (!std::isfinite(p) || p < 0.0) {
      throw InvalidInput("distribution entries must be finite and nonnegative");
    }
    sum += p;
  }
  if (std::abs(sum - 1.0) > kRenormalizeTolerance) {
    throw InvalidInput("distribution sums to " + std::to_string(sum));
  }
  for (double& p : probs_) {
    p /= sum;
  }
}

CategoricalDistribution CategoricalDistribution::uniform(std::size_t n_classes) {
  if (n_classes < 2) {
    throw InvalidInput("uniform distribution needs at least 2 classes");
  }
  return CategoricalDistribution(
      std::vector<double>(n_classes, 1.0 / static_cast<double>(n_classes)));
}

CategoricalDistribution CategoricalDistribution::one_hot(std::size_t n_classes,
                                                         std::size_t index) {
  if (index >= n_classes) {
    throw InvalidInput("one-hot index out of range");
  }
  std::vector<double> probs(n_classes, 0.0);
  probs[index] = 1.0;
  return CategoricalDistribution(std::move(probs));
}

std::size_t CategoricalDistribution::argmax() const {
  return static_cast<std::size_t>(
      std::max_element(probs_.begin(), probs_.end()) - probs_.begin());
}

LogScoreVector::LogScoreVector(std::vector<double> scores) : scores_(std::move(scores)) {
  if (scores_.size() < 2) {
    throw InvalidInput("log-score vector needs at least 2 classes");
  }
  for (double s : scores_) {
    if (!std::isfinite(s)) {
      throw InvalidInput("log-scores must be finite");
    }
  }
}

CategoricalDistribution normalize_log_scores(const LogScoreVector& scores) {
  return softmax(scores.scores());
}

CategoricalDistribution softmax(std::span<const double> scores) {
  double max_score = -std::numeric_limits<double>::infinity();
  for (double s : scores) {
    if (std::isnan(s) || s == std::numeric_limits<double>::infinity()) {
      throw InvalidInput("softmax input contains NaN or +inf");
    }
    max_score = std::max(max_score, s);
  }
  if (!std::isfinite(max_score)) {
    throw InvalidInput("softmax input has no finite entry");
  }
  std::vector<double> probs(scores.size());
  double total = 0.0;
  for (std::size_t i = 0; i < scores.size(); ++i) {
    probs[i] = std::exp(scores[i] - max_score);
    total += probs[i];
  }
  for (double& p : probs) {
    p /= total;
  }
  return CategoricalDistribution(std::move(probs));
}

double entropy(const CategoricalDistribution& p) {
  double h = 0.0;
  for (double v : p.probs()) {
    if (v > 0.0) {
      h -= v * std::log(v);
    }
  }
  return std::max(h, 0.0);
}

Top2Stats top2_stats(const CategoricalDistribution& p) {
  std::size_t first = 0;
  for (std::size_t i = 1; i < p.size(); ++i) {
    if (p[i] > p[first]) {
      first = i;
    }
  }
  double second = -1.0;
  for (std::size_t i = 0; i < p.size(); ++i) {
    if (i != first && p[i] > second) {
      second = p[i];
    }
  }
  return {p[first], p[first] - second};
}

std::vector<double> log_probs(const CategoricalDistribution& p) {
  std::vector<double> out(p.size());
  std::transform(p.probs().begin(), p.probs().end(), out.begin(),
                 [](double v) { return std::log(v); });
  return out;
}

double total_variation(const CategoricalDistribution& a, const CategoricalDistribution& b) {
  if (a.size() != b.size()) {
    throw DimensionError("total_variation: class counts differ");
  }
  double tv = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    tv += std::abs(a[i] - b[i]);
  }
  return 0.5 * tv;
}

double log_sum_exp(std::span<const double> values) {
  double m = -std::numeric_limits<double>::infinity();
  for (double v : values) {
    m = std::max(m, v);
  }
  if (!std::isfinite(m)) {
    return m;
  }
  double s = 0.0;
  for (double v : values) {
    s += std::exp(v - m);
  }
  return m + std::log(s);
}

std::uint64_t derive_seed(std::uint64_t seed, std::uint64_t stream) {
  std::uint64_t z = seed + 0x9e3779b97f4a7c15ULL * (stream + 1);
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
  return z ^ (z >> 31);
}

}  // namespace finch
