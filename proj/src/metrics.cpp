#include "finch/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>

#include "finch/error.hpp"
#include "finch/training.hpp"

namespace finch {

namespace {

void check_lengths(std::span<const CategoricalDistribution> preds,
                   std::span<const std::size_t> labels) {
  if (preds.size() != labels.size()) {
    throw DimensionError("predictions and labels differ in length");
  }
  if (preds.empty()) {
    throw InvalidInput("no predictions to evaluate");
  }
  const std::size_t c = preds.front().size();
  for (std::size_t i = 0; i < preds.size(); ++i) {
    if (preds[i].size() != c) {
      throw DimensionError("predictions have differing class counts");
    }
    if (labels[i] >= c) {
      throw InvalidInput("label out of range");
    }
  }
}

}  // namespace

double top1_accuracy(std::span<const CategoricalDistribution> preds,
                     std::span<const std::size_t> labels) {
  check_lengths(preds, labels);
  std::size_t correct = 0;
  for (std::size_t i = 0; i < preds.size(); ++i) {
    correct += preds[i].argmax() == labels[i] ? 1 : 0;
  }
  return static_cast<double>(correct) / static_cast<double>(preds.size());
}

double average_precision(std::span<const double> scores, std::span<const std::uint8_t> positives) {
  if (scores.size() != positives.size()) {
    throw DimensionError("average_precision: scores and labels differ in length");
  }
  std::vector<std::size_t> order(scores.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::stable_sort(order.begin(), order.end(),
                   [&](std::size_t a, std::size_t b) { return scores[a] > scores[b]; });
  double sum = 0.0;
  std::size_t hits = 0;
  for (std::size_t rank = 0; rank < order.size(); ++rank) {
    if (positives[order[rank]]) {
      ++hits;
      sum += static_cast<double>(hits) / static_cast<double>(rank + 1);
    }
  }
  if (hits == 0) {
    throw InvalidInput("average_precision: no positives");
  }
  return sum / static_cast<double>(hits);
}

// Mann-Whitney U with midranks over tied groups.
double binary_auroc(std::span<const double> scores, std::span<const std::uint8_t> positives) {
  if (scores.size() != positives.size()) {
    throw DimensionError("auroc: scores and labels differ in length");
  }
  std::vector<std::size_t> order(scores.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::sort(order.begin(), order.end(),
            [&](std::size_t a, std::size_t b) { return scores[a] < scores[b]; });
  double pos_rank_sum = 0.0;
  std::size_t n_pos = 0;
  std::size_t i = 0;
  while (i < order.size()) {
    std::size_t j = i;
    while (j < order.size() && scores[order[j]] == scores[order[i]]) {
      ++j;
    }
    const double midrank = 0.5 * static_cast<double>(i + 1 + j);  // mean of ranks i+1..j
    for (std::size_t k = i; k < j; ++k) {
      if (positives[order[k]]) {
        pos_rank_sum += midrank;
        ++n_pos;
      }
    }
    i = j;
  }
  const std::size_t n_neg = scores.size() - n_pos;
  if (n_pos == 0 || n_neg == 0) {
    throw InvalidInput("auroc: need at least one positive and one negative");
  }
  const double np = static_cast<double>(n_pos);
  const double u = pos_rank_sum - np * (np + 1.0) / 2.0;
  return u / (np * static_cast<double>(n_neg));
}

std::vector<double> class_scores(std::span<const CategoricalDistribution> preds, std::size_t c) {
  std::vector<double> s(preds.size());
  for (std::size_t i = 0; i < preds.size(); ++i) {
    s[i] = preds[i][c];
  }
  return s;
}

std::vector<std::uint8_t> class_positives(std::span<const std::size_t> labels, std::size_t c) {
  std::vector<std::uint8_t> p(labels.size());
  for (std::size_t i = 0; i < labels.size(); ++i) {
    p[i] = labels[i] == c ? 1 : 0;
  }
  return p;
}

double class_mean_average_precision(std::span<const CategoricalDistribution> preds,
                                    std::span<const std::size_t> labels,
                                    std::vector<double>* per_class) {
  check_lengths(preds, labels);
  const std::size_t n_classes = preds.front().size();
  if (per_class) {
    per_class->assign(n_classes, std::numeric_limits<double>::quiet_NaN());
  }
  double sum = 0.0;
  std::size_t counted = 0;
  for (std::size_t c = 0; c < n_classes; ++c) {
    const auto pos = class_positives(labels, c);
    if (std::find(pos.begin(), pos.end(), 1) == pos.end()) {
      continue;
    }
    const double ap = average_precision(class_scores(preds, c), pos);
    if (per_class) {
      (*per_class)[c] = ap;
    }
    sum += ap;
    ++counted;
  }
  return counted ? sum / static_cast<double>(counted) : 0.0;
}

double macro_auroc(std::span<const CategoricalDistribution> preds,
                   std::span<const std::size_t> labels) {
  check_lengths(preds, labels);
  const std::size_t n_classes = preds.front().size();
  double sum = 0.0;
  std::size_t counted = 0;
  for (std::size_t c = 0; c < n_classes; ++c) {
    const auto pos = class_positives(labels, c);
    const auto n_pos = static_cast<std::size_t>(std::count(pos.begin(), pos.end(), 1));
    if (n_pos == 0 || n_pos == pos.size()) {
      continue;
    }
    sum += binary_auroc(class_scores(preds, c), pos);
    ++counted;
  }
  return counted ? sum / static_cast<double>(counted) : 0.0;
}

double mean_log_loss(std::span<const CategoricalDistribution> preds,
                     std::span<const std::size_t> labels) {
  check_lengths(preds, labels);
  double total = 0.0;
  for (std::size_t i = 0; i < preds.size(); ++i) {
    total += cross_entropy(preds[i], labels[i]);
  }
  return total / static_cast<double>(preds.size());
}

EvalReport evaluate(std::span<const CategoricalDistribution> preds,
                    std::span<const std::size_t> labels) {
  EvalReport r;
  r.top1 = top1_accuracy(preds, labels);
  r.cmap = class_mean_average_precision(preds, labels, &r.per_class_ap);
  r.auroc = macro_auroc(preds, labels);
  r.mean_log_loss = mean_log_loss(preds, labels);
  r.n_samples = preds.size();
  return r;
}

}  // namespace finch
