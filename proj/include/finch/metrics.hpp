#pragma once

#include <cstddef>
#include <cstdint>
#include <span>
#include <vector>

#include "finch/core.hpp"

namespace finch {

struct EvalReport {
  double top1 = 0.0;
  double cmap = 0.0;
  double auroc = 0.0;
  double mean_log_loss = 0.0;
  std::vector<double> per_class_ap;  // NaN for classes without positives
  std::size_t n_samples = 0;

  bool operator==(const EvalReport&) const = default;
};

/// Fraction of predictions whose argmax (lowest index on ties) is the label.
double top1_accuracy(std::span<const CategoricalDistribution> preds,
                     std::span<const std::size_t> labels);

/// Mean precision at the rank of each positive. Scores are ranked in
/// descending order with ties broken by original index. Throws InvalidInput
/// when there are no positives.
double average_precision(std::span<const double> scores, std::span<const std::uint8_t> positives);

/// One-vs-rest AUROC of a single class (ties count one half). Throws
/// InvalidInput unless there is at least one positive and one negative.
double binary_auroc(std::span<const double> scores, std::span<const std::uint8_t> positives);

// Column c of the predictions as a score vector, and its one-vs-rest labels
// (1 = positive).
std::vector<double> class_scores(std::span<const CategoricalDistribution> preds, std::size_t c);
std::vector<std::uint8_t> class_positives(std::span<const std::size_t> labels, std::size_t c);

/// Class-mean AP over classes with at least one positive. per_class (if
/// given) receives one entry per class, NaN for skipped classes.
double class_mean_average_precision(std::span<const CategoricalDistribution> preds,
                                    std::span<const std::size_t> labels,
                                    std::vector<double>* per_class = nullptr);

/// Unweighted mean of per-class AUROC over classes that have both positives
/// and negatives.
double macro_auroc(std::span<const CategoricalDistribution> preds,
                   std::span<const std::size_t> labels);

double mean_log_loss(std::span<const CategoricalDistribution> preds,
                     std::span<const std::size_t> labels);

EvalReport evaluate(std::span<const CategoricalDistribution> preds,
                    std::span<const std::size_t> labels);

}  // namespace finch
