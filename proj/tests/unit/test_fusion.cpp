#include <doctest.h>

#include <cmath>
#include <limits>
#include <random>

#include "finch/error.hpp"
#include "finch/fusion.hpp"
#include "support/oracles.hpp"

using namespace finch;
using finch::testing::logs;
using finch::testing::random_distribution;

namespace {

// Independent evaluation of the tempered log-linear rule in probability
// space: p ∝ audio^(1/T) * (prior + eps)^omega.
std::vector<double> fuse_oracle(const CategoricalDistribution& audio,
                                const CategoricalDistribution& prior, double omega, double t,
                                double eps) {
  std::vector<double> out(audio.size());
  double z = 0.0;
  for (std::size_t i = 0; i < out.size(); ++i) {
    out[i] = std::pow(audio[i], 1.0 / t) * std::pow(prior[i] + eps, omega);
    z += out[i];
  }
  for (double& v : out) v /= z;
  return out;
}

double loss_of(const std::vector<double>& lp, const CategoricalDistribution& prior, double omega,
               double t, double eps, std::size_t label) {
  return -std::log(fuse({lp, prior.probs(), omega, t, eps})[label]);
}

}  // namespace

TEST_CASE("omega zero returns the audio distribution") {
  const CategoricalDistribution audio({0.7, 0.3});
  const auto lp = logs(audio);
  for (const auto& prior : {CategoricalDistribution({0.9, 0.1}), CategoricalDistribution({0.0, 1.0})}) {
    const auto f = fuse({lp, prior.probs(), 0.0, 1.0, 1e-3});
    CHECK(std::abs(f[0] - 0.7) < 1e-12);
    CHECK(std::abs(f[1] - 0.3) < 1e-12);
  }
}

TEST_CASE("hand-computed product of experts") {
  const auto lp = logs(CategoricalDistribution({0.7, 0.3}));
  const CategoricalDistribution prior({0.9, 0.1});
  const auto f = fuse({lp, prior.probs(), 1.0, 1.0, 0.0});
  CHECK(std::abs(f[0] - 0.63 / 0.66) < 1e-12);
  CHECK(std::abs(f[1] - 0.03 / 0.66) < 1e-12);
}

TEST_CASE("uniform prior leaves only the tempered audio") {
  std::mt19937_64 rng(1);
  for (int t = 0; t < 100; ++t) {
    const std::size_t c = 2 + t % 9;
    const auto audio = random_distribution(rng, c);
    const double temp = 0.3 + 0.05 * t;
    const double omega = 0.1 * t;
    const auto f = fuse({logs(audio), CategoricalDistribution::uniform(c).probs(), omega, temp, 1e-4});
    const auto want = fuse_oracle(audio, CategoricalDistribution::uniform(c), 0.0, temp, 0.0);
    for (std::size_t i = 0; i < c; ++i) CHECK(std::abs(f[i] - want[i]) < 1e-12);
  }
}

TEST_CASE("fusion agrees with a probability-space oracle") {
  std::mt19937_64 rng(2);
  std::uniform_real_distribution<double> om(0.0, 5.0), te(0.2, 3.0), ep(0.0, 1e-2);
  for (int t = 0; t < 300; ++t) {
    const std::size_t c = 2 + t % 15;
    const auto audio = random_distribution(rng, c);
    const auto prior = random_distribution(rng, c);
    const double omega = om(rng), temp = te(rng), eps = ep(rng);
    const auto f = fuse({logs(audio), prior.probs(), omega, temp, eps});
    const auto want = fuse_oracle(audio, prior, omega, temp, eps);
    for (std::size_t i = 0; i < c; ++i) CHECK(std::abs(f[i] - want[i]) < 1e-10);
  }
}

TEST_CASE("recoverability over random instances") {
  std::mt19937_64 rng(3);
  for (int t = 0; t < 1000; ++t) {
    const std::size_t c = 2 + t % 30;
    const auto audio = random_distribution(rng, c, 0.5);
    const auto prior = random_distribution(rng, c, 0.5);
    const auto f = fuse({logs(audio), prior.probs(), 0.0, 1.0, 0.0});
    for (std::size_t i = 0; i < c; ++i) CHECK(std::abs(f[i] - audio[i]) <= 1e-9);
  }
}

TEST_CASE("invalid operands") {
  const auto lp = logs(CategoricalDistribution({0.6, 0.4}));
  const std::vector<double> prior{0.5, 0.5};
  CHECK_THROWS_AS(fuse({lp, prior, 1.0, 0.0, 1e-3}), InvalidInput);
  CHECK_THROWS_AS(fuse({lp, prior, 1.0, -1.0, 1e-3}), InvalidInput);
  CHECK_THROWS_AS(fuse({lp, prior, 1.0, 1.0, -1e-3}), InvalidInput);
  CHECK_THROWS_AS(fuse({lp, prior, -0.5, 1.0, 1e-3}), InvalidInput);
  CHECK_THROWS_AS(fuse({lp, std::vector<double>{0.5, 0.4, 0.1}, 1.0, 1.0, 0.0}), DimensionError);
  CHECK_THROWS_AS(fuse({std::vector<double>{-1.0, -1.0}, prior, 1.0, 1.0, 0.0}), InvalidInput);
  CHECK_THROWS_AS(fuse({lp, std::vector<double>{0.7, 0.7}, 1.0, 1.0, 0.0}), InvalidInput);
}

TEST_CASE("zero-probability audio classes stay at zero") {
  const double ninf = -std::numeric_limits<double>::infinity();
  const std::vector<double> lp{std::log(0.5), ninf, std::log(0.5)};
  const auto f = fuse({lp, std::vector<double>{0.1, 0.8, 0.1}, 2.0, 1.0, 1e-3});
  CHECK(f[1] == 0.0);
  CHECK(f[0] == doctest::Approx(0.5));
}

TEST_CASE("bounded influence of the prior term") {
  std::mt19937_64 rng(4);
  for (int t = 0; t < 200; ++t) {
    const std::size_t c = 3 + t % 6;
    const auto audio = random_distribution(rng, c);
    const auto prior = random_distribution(rng, c, 0.2);
    const double omega = 0.05 * t, eps = 1e-3;
    const auto f = fuse({logs(audio), prior.probs(), omega, 1.0, eps});
    // Log-odds between any two classes move by at most 2 * omega * |ln eps|.
    for (std::size_t i = 1; i < c; ++i) {
      const double shift = (std::log(f[i]) - std::log(f[0])) - (std::log(audio[i]) - std::log(audio[0]));
      CHECK(std::abs(shift) <= 2.0 * omega * std::abs(std::log(eps)) + 1e-9);
      CHECK(std::abs(omega * std::log(prior[i] + eps)) <= omega * std::abs(std::log(eps)) + 1e-12);
    }
  }
}

TEST_CASE("agreement sharpens the top class") {
  std::mt19937_64 rng(5);
  int tested = 0;
  while (tested < 300) {
    const std::size_t c = 2 + tested % 8;
    const auto audio = random_distribution(rng, c);
    const auto prior = random_distribution(rng, c);
    if (audio.argmax() != prior.argmax()) continue;
    ++tested;
    const std::size_t k = audio.argmax();
    for (double omega : {0.1, 0.5, 1.0, 3.0}) {
      const auto f = fuse({logs(audio), prior.probs(), omega, 1.0, 0.0});
      CHECK(f[k] >= audio[k] - 1e-12);
    }
  }
}

TEST_CASE("log-odds are affine in omega") {
  std::mt19937_64 rng(6);
  for (int t = 0; t < 100; ++t) {
    const std::size_t c = 2 + t % 7;
    const auto audio = random_distribution(rng, c);
    const auto prior = random_distribution(rng, c);
    auto lo = [&](double omega, std::size_t i) {
      const auto f = fuse({logs(audio), prior.probs(), omega, 1.3, 1e-4});
      return std::log(f[i]) - std::log(f[0]);
    };
    for (std::size_t i = 1; i < c; ++i) {
      const double a = lo(0.0, i), b = lo(1.0, i), d = lo(2.0, i);
      CHECK(std::abs((d - b) - (b - a)) < 1e-9);
    }
  }
}

TEST_CASE("gradients vanish on a one-hot fused output at the label") {
  const std::vector<double> lp{0.0, -std::numeric_limits<double>::infinity()};
  const auto r = fuse_gradients({lp, std::vector<double>{0.3, 0.7}, 1.0, 1.0, 1e-3}, 0);
  CHECK(std::abs(r.grads.omega) < 1e-12);
  CHECK(std::abs(r.grads.temperature) < 1e-12);
  CHECK(std::abs(r.grads.epsilon) < 1e-12);
  CHECK(r.loss == 0.0);
}

TEST_CASE("uniform prior gives no omega gradient") {
  const auto lp = logs(CategoricalDistribution({0.2, 0.5, 0.3}));
  const auto r = fuse_gradients({lp, CategoricalDistribution::uniform(3).probs(), 0.7, 1.0, 0.0}, 2);
  CHECK(std::abs(r.grads.omega) < 1e-12);
}

TEST_CASE("fusion gradients match central differences") {
  std::mt19937_64 rng(7);
  std::uniform_real_distribution<double> om(0.0, 4.0), te(0.3, 2.5), ep(1e-4, 1e-2);
  const double h = 1e-6;
  for (int t = 0; t < 200; ++t) {
    const std::size_t c = 2 + t % 10;
    const auto audio = random_distribution(rng, c);
    const auto prior = random_distribution(rng, c);
    const auto lp = logs(audio);
    const double omega = om(rng), temp = te(rng), eps = ep(rng);
    const std::size_t label = t % c;
    const auto r = fuse_gradients({lp, prior.probs(), omega, temp, eps}, label);
    CHECK(r.loss == doctest::Approx(loss_of(lp, prior, omega, temp, eps, label)).epsilon(1e-12));

    const double d_omega = (loss_of(lp, prior, omega + h, temp, eps, label) -
                            loss_of(lp, prior, std::max(0.0, omega - h), temp, eps, label)) /
                           (omega + h - std::max(0.0, omega - h));
    const double d_temp = (loss_of(lp, prior, omega, temp + h, eps, label) -
                           loss_of(lp, prior, omega, temp - h, eps, label)) / (2 * h);
    const double he = eps * 1e-4;
    const double d_eps = (loss_of(lp, prior, omega, temp, eps + he, label) -
                          loss_of(lp, prior, omega, temp, eps - he, label)) / (2 * he);
    CHECK(finch::testing::grad_close(r.grads.omega, d_omega, 1e-5));
    CHECK(finch::testing::grad_close(r.grads.temperature, d_temp, 1e-5));
    CHECK(finch::testing::grad_close(r.grads.epsilon, d_eps, 1e-5));

    // Audio log-prob gradient, treating the log-scores as free inputs.
    for (std::size_t i = 0; i < c; ++i) {
      auto score_loss = [&](const std::vector<double>& s) {
        std::vector<double> z(c);
        for (std::size_t k = 0; k < c; ++k) z[k] = s[k] / temp + omega * std::log(prior[k] + eps);
        return -std::log(softmax(z)[label]);
      };
      const double num = finch::testing::central_difference(lp, i, h, score_loss);
      CHECK(finch::testing::grad_close(r.grads.audio_log_probs[i], num, 1e-5));
    }
  }
}
