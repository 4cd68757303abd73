#include <doctest.h>

#include <cmath>
#include <limits>
#include <random>

#include "finch/core.hpp"
#include "finch/error.hpp"
#include "support/oracles.hpp"

using namespace finch;
using finch::testing::random_distribution;

TEST_CASE("distribution construction validates and renormalizes") {
  CategoricalDistribution p({0.2, 0.3, 0.5});
  CHECK(p.size() == 3);
  CHECK(p[2] == doctest::Approx(0.5));

  CategoricalDistribution nearly({0.5 + 4e-7, 0.5});
  CHECK(std::abs(nearly[0] + nearly[1] - 1.0) <= kProbabilityTolerance);

  CHECK_THROWS_AS(CategoricalDistribution({0.5, 0.6}), InvalidInput);
  CHECK_THROWS_AS(CategoricalDistribution({1.0}), InvalidInput);
  CHECK_THROWS_AS(CategoricalDistribution({-0.1, 1.1}), InvalidInput);
  CHECK_THROWS_AS(CategoricalDistribution({std::nan(""), 1.0}), InvalidInput);
  CHECK_THROWS_AS(CategoricalDistribution::uniform(1), InvalidInput);
}

TEST_CASE("argmax breaks ties toward the lowest index") {
  CHECK(CategoricalDistribution({0.4, 0.4, 0.2}).argmax() == 0);
  CHECK(CategoricalDistribution({0.2, 0.4, 0.4}).argmax() == 1);
  CHECK(CategoricalDistribution::one_hot(5, 3).argmax() == 3);
}

TEST_CASE("normalize_log_scores examples") {
  auto u = normalize_log_scores(LogScoreVector({0.0, 0.0, 0.0}));
  for (std::size_t i = 0; i < 3; ++i) CHECK(u[i] == doctest::Approx(1.0 / 3.0).epsilon(1e-15));

  auto two = normalize_log_scores(LogScoreVector({std::log(2.0), 0.0}));
  CHECK(two[0] == doctest::Approx(2.0 / 3.0).epsilon(1e-15));
  CHECK(two[1] == doctest::Approx(1.0 / 3.0).epsilon(1e-15));

  for (double c : {-1000.0, -3.5, 0.0, 17.0, 800.0}) {
    auto q = normalize_log_scores(LogScoreVector({c, c + std::log(3.0)}));
    CHECK(std::abs(q[0] - 0.25) < 1e-12);
    CHECK(std::abs(q[1] - 0.75) < 1e-12);
  }
}

TEST_CASE("non-finite log scores are rejected") {
  const double inf = std::numeric_limits<double>::infinity();
  CHECK_THROWS_AS(LogScoreVector({0.0, inf}), InvalidInput);
  CHECK_THROWS_AS(LogScoreVector({0.0, -inf}), InvalidInput);
  CHECK_THROWS_AS(LogScoreVector({0.0, std::nan("")}), InvalidInput);
}

TEST_CASE("softmax accepts -inf entries but not all of them") {
  const double inf = std::numeric_limits<double>::infinity();
  auto p = softmax(std::vector<double>{0.0, -inf, 0.0});
  CHECK(p[1] == 0.0);
  CHECK(p[0] == doctest::Approx(0.5));
  CHECK_THROWS_AS(softmax(std::vector<double>{-inf, -inf}), InvalidInput);
  CHECK_THROWS_AS(softmax(std::vector<double>{0.0, inf}), InvalidInput);
  CHECK_THROWS_AS(softmax(std::vector<double>{0.0, std::nan("")}), InvalidInput);
}

TEST_CASE("normalize_log_scores properties on random inputs") {
  std::mt19937_64 rng(11);
  std::normal_distribution<double> n(0.0, 20.0);
  std::uniform_int_distribution<std::size_t> size(2, 40);
  for (int t = 0; t < 500; ++t) {
    std::vector<double> s(size(rng));
    for (double& v : s) v = n(rng);
    auto p = normalize_log_scores(LogScoreVector(s));
    double sum = 0.0;
    for (double v : p.probs()) sum += v;
    CHECK(std::abs(sum - 1.0) <= 1e-9);

    const double shift = n(rng) * 10.0;
    std::vector<double> shifted = s;
    for (double& v : shifted) v += shift;
    auto q = normalize_log_scores(LogScoreVector(shifted));
    for (std::size_t i = 0; i < s.size(); ++i) CHECK(std::abs(p[i] - q[i]) <= 1e-12);
  }
}

TEST_CASE("entropy examples") {
  CHECK(entropy(CategoricalDistribution::uniform(4)) == doctest::Approx(std::log(4.0)));
  CHECK(std::abs(entropy(CategoricalDistribution::uniform(4)) - 1.386294) < 1e-6);
  CHECK(entropy(CategoricalDistribution::one_hot(4, 2)) == 0.0);
  const double h = entropy(CategoricalDistribution({0.5, 0.25, 0.25}));
  CHECK(h == doctest::Approx(1.5 * std::log(2.0)).epsilon(1e-14));
  CHECK(std::abs(h - 1.039721) < 1e-6);
}

TEST_CASE("entropy lies in [0, ln C]") {
  std::mt19937_64 rng(5);
  for (int t = 0; t < 300; ++t) {
    const std::size_t c = 2 + t % 20;
    auto p = random_distribution(rng, c, 0.3);
    const double h = entropy(p);
    CHECK(h >= 0.0);
    CHECK(h <= std::log(static_cast<double>(c)) + 1e-12);
  }
}

TEST_CASE("top2_stats examples") {
  auto s = top2_stats(CategoricalDistribution({0.5, 0.3, 0.2}));
  CHECK(s.max_prob == doctest::Approx(0.5));
  CHECK(s.margin == doctest::Approx(0.2));
  auto h = top2_stats(CategoricalDistribution::one_hot(3, 1));
  CHECK(h.max_prob == 1.0);
  CHECK(h.margin == 1.0);
  auto u = top2_stats(CategoricalDistribution::uniform(7));
  CHECK(u.max_prob == doctest::Approx(1.0 / 7.0));
  CHECK(u.margin == 0.0);
}

TEST_CASE("top2 margin bounds") {
  std::mt19937_64 rng(9);
  for (int t = 0; t < 300; ++t) {
    auto p = random_distribution(rng, 2 + t % 10, 0.5);
    auto s = top2_stats(p);
    CHECK(s.margin >= 0.0);
    CHECK(s.margin <= 1.0);
    CHECK(s.margin <= s.max_prob);
  }
}

TEST_CASE("scalar helpers") {
  CHECK(sigmoid(0.0) == 0.5);
  CHECK(sigmoid(-800.0) >= 0.0);
  CHECK(sigmoid(800.0) == 1.0);
  CHECK(logit(sigmoid(1.7)) == doctest::Approx(1.7).epsilon(1e-12));
  CHECK(softplus(inverse_softplus(0.3)) == doctest::Approx(0.3).epsilon(1e-12));
  CHECK(softplus(1000.0) == doctest::Approx(1000.0));
  CHECK(total_variation(CategoricalDistribution({1.0, 0.0}), CategoricalDistribution({0.0, 1.0})) ==
        doctest::Approx(1.0));
  CHECK(log_sum_exp(std::vector<double>{std::log(1.0), std::log(3.0)}) ==
        doctest::Approx(std::log(4.0)));
  CHECK(derive_seed(1, 2) == derive_seed(1, 2));
  CHECK(derive_seed(1, 2) != derive_seed(1, 3));
  CHECK(derive_seed(1, 2) != derive_seed(2, 2));
}
