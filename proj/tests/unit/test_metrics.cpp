#include <doctest.h>

#include <cmath>
#include <random>

#include "finch/error.hpp"
#include "finch/metrics.hpp"
#include "support/oracles.hpp"

using namespace finch;
using finch::testing::brute_force_ap;
using finch::testing::pairwise_auroc;

namespace {
std::vector<CategoricalDistribution> one_hots(const std::vector<std::size_t>& cls, std::size_t c) {
  std::vector<CategoricalDistribution> out;
  for (std::size_t k : cls) out.push_back(CategoricalDistribution::one_hot(c, k));
  return out;
}
}  // namespace

TEST_CASE("top-1 accuracy") {
  const std::vector<std::size_t> labels{0, 1, 2, 1};
  CHECK(top1_accuracy(one_hots(labels, 3), labels) == 1.0);
  CHECK(top1_accuracy(one_hots({1, 2, 0, 0}, 3), labels) == 0.0);
  CHECK(top1_accuracy(one_hots({0, 1, 0, 0}, 3), labels) == 0.5);
  // A tie resolves to the lowest index.
  const std::vector<CategoricalDistribution> tie{CategoricalDistribution({0.5, 0.5})};
  CHECK(top1_accuracy(tie, std::vector<std::size_t>{0}) == 1.0);
  CHECK(top1_accuracy(tie, std::vector<std::size_t>{1}) == 0.0);
  CHECK_THROWS(top1_accuracy(tie, std::vector<std::size_t>{0, 1}));
}

TEST_CASE("average precision examples") {
  const std::vector<double> s{0.9, 0.8, 0.7};
  CHECK(average_precision(s, std::vector<std::uint8_t>{1, 0, 1}) == doctest::Approx(5.0 / 6.0));
  CHECK(average_precision(s, std::vector<std::uint8_t>{1, 1, 0}) == 1.0);
  const std::vector<double> five{5, 4, 3, 2, 1};
  CHECK(average_precision(five, std::vector<std::uint8_t>{0, 0, 0, 0, 1}) == doctest::Approx(0.2));
  CHECK_THROWS_AS(average_precision(s, std::vector<std::uint8_t>{0, 0, 0}), InvalidInput);
  // Equal scores: the earlier index ranks first.
  const std::vector<double> tied{0.5, 0.5};
  CHECK(average_precision(tied, std::vector<std::uint8_t>{0, 1}) == doctest::Approx(0.5));
  CHECK(average_precision(tied, std::vector<std::uint8_t>{1, 0}) == 1.0);
}

TEST_CASE("AUROC examples") {
  const std::vector<double> s{0.9, 0.3, 0.5, 0.7};
  CHECK(binary_auroc(s, std::vector<std::uint8_t>{1, 1, 0, 0}) == doctest::Approx(0.5));
  CHECK(binary_auroc(s, std::vector<std::uint8_t>{1, 0, 0, 1}) == 1.0);
  const std::vector<double> flat{0.2, 0.2, 0.2, 0.2};
  CHECK(binary_auroc(flat, std::vector<std::uint8_t>{1, 0, 1, 0}) == 0.5);
  CHECK_THROWS_AS(binary_auroc(s, std::vector<std::uint8_t>{1, 1, 1, 1}), InvalidInput);
}

TEST_CASE("fast metrics agree with brute-force oracles") {
  std::mt19937_64 rng(77);
  for (int t = 0; t < 100; ++t) {
    const std::size_t n = 2 + rng() % 199;
    const std::size_t c = 2 + rng() % 6;
    std::uniform_int_distribution<std::size_t> lab(0, c - 1);
    std::vector<CategoricalDistribution> preds;
    std::vector<std::size_t> labels;
    // Coarse probabilities so ties are common.
    for (std::size_t i = 0; i < n; ++i) {
      std::vector<double> p(c);
      double sum = 0.0;
      for (double& v : p) {
        v = static_cast<double>(1 + rng() % 4);
        sum += v;
      }
      for (double& v : p) v /= sum;
      preds.emplace_back(p);
      labels.push_back(lab(rng));
    }
    std::vector<double> per_class;
    const double cmap = class_mean_average_precision(preds, labels, &per_class);
    double ap_sum = 0.0, auc_sum = 0.0;
    std::size_t ap_n = 0, auc_n = 0;
    for (std::size_t k = 0; k < c; ++k) {
      const auto scores = class_scores(preds, k);
      const auto pos = class_positives(labels, k);
      std::size_t n_pos = 0;
      for (auto v : pos) n_pos += v;
      if (n_pos > 0) {
        const double ap = brute_force_ap(scores, pos);
        CHECK(std::abs(per_class[k] - ap) <= 1e-12);
        ap_sum += ap;
        ++ap_n;
      } else {
        CHECK(std::isnan(per_class[k]));
      }
      if (n_pos > 0 && n_pos < n) {
        const double auc = pairwise_auroc(scores, pos);
        CHECK(std::abs(binary_auroc(scores, pos) - auc) <= 1e-12);
        auc_sum += auc;
        ++auc_n;
      }
    }
    CHECK(std::abs(cmap - ap_sum / static_cast<double>(ap_n)) <= 1e-12);
    if (auc_n > 0) {
      CHECK(std::abs(macro_auroc(preds, labels) - auc_sum / static_cast<double>(auc_n)) <= 1e-12);
    }
  }
}

TEST_CASE("AP and AUROC are invariant under monotone transforms") {
  std::mt19937_64 rng(3);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  for (int t = 0; t < 50; ++t) {
    const std::size_t n = 5 + t;
    std::vector<double> s(n), ts(n);
    std::vector<std::uint8_t> pos(n);
    for (std::size_t i = 0; i < n; ++i) {
      s[i] = std::round(u(rng) * 10.0) / 10.0;
      ts[i] = std::exp(3.0 * s[i]) - 7.0;
      pos[i] = i % 3 == 0;
    }
    pos[1] = 0;
    CHECK(std::abs(average_precision(s, pos) - average_precision(ts, pos)) < 1e-12);
    CHECK(std::abs(binary_auroc(s, pos) - binary_auroc(ts, pos)) < 1e-12);
  }
}

TEST_CASE("absent classes are excluded from the macro means") {
  const std::vector<std::size_t> labels{0, 0, 1, 1};
  const std::vector<CategoricalDistribution> preds{
      CategoricalDistribution({0.7, 0.2, 0.1}), CategoricalDistribution({0.6, 0.3, 0.1}),
      CategoricalDistribution({0.2, 0.7, 0.1}), CategoricalDistribution({0.3, 0.6, 0.1})};
  std::vector<double> per_class;
  CHECK(class_mean_average_precision(preds, labels, &per_class) == 1.0);
  CHECK(std::isnan(per_class[2]));
  CHECK(macro_auroc(preds, labels) == 1.0);
}

TEST_CASE("evaluate fills every report field") {
  const std::vector<std::size_t> labels{0, 1, 1, 2};
  const std::vector<CategoricalDistribution> preds{
      CategoricalDistribution({0.6, 0.3, 0.1}), CategoricalDistribution({0.2, 0.5, 0.3}),
      CategoricalDistribution({0.4, 0.35, 0.25}), CategoricalDistribution({0.1, 0.1, 0.8})};
  const EvalReport r = evaluate(preds, labels);
  CHECK(r.n_samples == 4);
  CHECK(r.top1 == 0.75);
  CHECK(r.cmap > 0.0);
  CHECK(r.cmap <= 1.0);
  CHECK(r.auroc >= 0.0);
  CHECK(r.auroc <= 1.0);
  const double ll = -(std::log(0.6) + std::log(0.5) + std::log(0.35) + std::log(0.8)) / 4.0;
  CHECK(r.mean_log_loss == doctest::Approx(ll).epsilon(1e-14));
  CHECK(r.per_class_ap.size() == 3);
  CHECK(evaluate(preds, labels) == r);
}
