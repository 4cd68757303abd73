#include <doctest.h>

#include <cmath>
#include <limits>
#include <random>

#include "finch/error.hpp"
#include "finch/gate.hpp"
#include "finch/gradcheck.hpp"
#include "support/oracles.hpp"

using namespace finch;

namespace {

GatingFeatures random_features(std::mt19937_64& rng) {
  std::normal_distribution<double> n(0.0, 1.0);
  GatingFeatures u;
  for (double& v : u.values) v = n(rng);
  return u;
}

// Recomputes omega from scratch for the oracle: plain loops, eval mode or an
// explicit mask.
double omega_oracle(const GateParameters& g, const GatingFeatures& u,
                    const std::vector<double>& mask) {
  double z = g.b2;
  for (std::size_t j = 0; j < g.hidden; ++j) {
    double h = g.b1[j];
    for (std::size_t k = 0; k < 12; ++k) h += g.w1[j * 12 + k] * u[k];
    z += g.w2[j] * std::max(h, 0.0) * mask[j];
  }
  return g.omega_max() / (1.0 + std::exp(-z)) + g.epsilon();
}

}  // namespace

TEST_CASE("scalar reparameterizations") {
  CHECK(omega_max_from_raw(0.0) == doctest::Approx(1e-6 + (10.0 - 1e-6) * 0.5));
  CHECK(temperature_from_raw(0.0) == 1.0);
  CHECK(epsilon_from_raw(0.0) == doctest::Approx(1e-8 + (1e-2 - 1e-8) * 0.5));
  CHECK(omega_max_from_raw(omega_max_to_raw(2.0)) == doctest::Approx(2.0).epsilon(1e-12));
  CHECK(epsilon_from_raw(epsilon_to_raw(1e-4)) == doctest::Approx(1e-4).epsilon(1e-9));
  double prev_w = 0.0, prev_t = 0.0;
  for (double r = -30.0; r <= 30.0; r += 0.5) {
    const double w = omega_max_from_raw(r);
    const double t = temperature_from_raw(r);
    CHECK(w > kOmegaMaxFloor);
    CHECK(w < kOmegaMaxCeiling);
    if (r > -30.0 && r < 15.0) {
      CHECK(w > prev_w);
      CHECK(t > prev_t);
    }
    const double e = epsilon_from_raw(r);
    CHECK(e > kEpsilonMin * 0.999999);
    CHECK(e < kEpsilonMax);
    prev_w = w;
    prev_t = t;
  }
}

TEST_CASE("default width gives 897 network parameters") {
  const GateParameters g = GateParameters::zeros();
  CHECK(g.hidden == 64);
  CHECK(g.network_parameter_count() == 897);
  CHECK(g.w1.size() + g.b1.size() + g.w2.size() + 1 == 897);
  CHECK(g.dropout_rate == doctest::Approx(0.1));
}

TEST_CASE("zero network outputs half of omega_max plus epsilon") {
  GateParameters g = GateParameters::zeros(16);
  g.omega_max_raw = 0.7;
  g.eps_raw = -1.0;
  std::mt19937_64 rng(1);
  for (int t = 0; t < 20; ++t) {
    const double w = gate_forward(g, random_features(rng)).omega;
    CHECK(w == doctest::Approx(g.omega_max() * 0.5 + g.epsilon()).epsilon(1e-15));
  }
}

TEST_CASE("saturated output tends to epsilon") {
  GateParameters g = GateParameters::zeros(4);
  g.b2 = -800.0;
  CHECK(gate_forward(g, GatingFeatures{}).omega == doctest::Approx(g.epsilon()).epsilon(1e-12));
}

TEST_CASE("inverting the output map gives the requested weight") {
  GateParameters g = GateParameters::zeros(8);
  g.omega_max_raw = omega_max_to_raw(2.0);
  g.b2 = logit((0.8 - g.epsilon()) / g.omega_max());
  CHECK(std::abs(gate_forward(g, GatingFeatures{}).omega - 0.8) < 1e-12);
}

TEST_CASE("gate output stays inside its bounds") {
  std::mt19937_64 rng(7);
  for (int t = 0; t < 200; ++t) {
    GateParameters g = random_gate(8, 0.1, 3.0, 1000 + t);
    const GatingFeatures u = random_features(rng);
    const auto fw = gate_forward(g, u, GateMode::train, rng);
    CHECK(fw.omega >= g.epsilon());
    CHECK(fw.omega <= g.omega_max() + g.epsilon());
    CHECK(fw.omega <= kOmegaMaxCeiling + kEpsilonMax);
  }
}

TEST_CASE("forward matches a direct evaluation and the mask invariant") {
  std::mt19937_64 rng(8);
  const GateParameters g = random_gate(12, 0.25, 0.7, 99);
  for (int t = 0; t < 50; ++t) {
    const GatingFeatures u = random_features(rng);
    const auto ev = gate_forward(g, u);
    CHECK(ev.omega == doctest::Approx(omega_oracle(g, u, std::vector<double>(12, 1.0)))
                          .epsilon(1e-13));
    for (double m : ev.cache.dropout_mask) CHECK(m == 1.0);

    const auto tr = gate_forward(g, u, GateMode::train, rng);
    for (double m : tr.cache.dropout_mask) {
      CHECK((m == 0.0 || m == doctest::Approx(1.0 / 0.75)));
    }
    CHECK(tr.omega == doctest::Approx(omega_oracle(g, u, tr.cache.dropout_mask)).epsilon(1e-13));
  }
}

TEST_CASE("eval mode is deterministic bit for bit") {
  const GateParameters g = random_gate(16, 0.1, 1.0, 5);
  std::mt19937_64 rng(2);
  const GatingFeatures u = random_features(rng);
  std::mt19937_64 a(1), b(999);
  CHECK(gate_forward(g, u, GateMode::eval, a).omega == gate_forward(g, u, GateMode::eval, b).omega);
  CHECK(gate_forward(g, u).omega == gate_forward(g, u).omega);
}

TEST_CASE("non-finite parameters raise a numeric error") {
  GateParameters g = GateParameters::zeros(4);
  g.w1[3] = std::numeric_limits<double>::quiet_NaN();
  CHECK_THROWS_AS(gate_forward(g, GatingFeatures{}), NumericError);
  GateParameters h = GateParameters::zeros(4);
  h.w2.pop_back();
  CHECK_THROWS_AS(gate_forward(h, GatingFeatures{}), DimensionError);
}

TEST_CASE("backward: zero upstream gradient gives zero gradients") {
  const GateParameters g = random_gate(6, 0.1, 1.0, 3);
  std::mt19937_64 rng(4);
  const auto fw = gate_forward(g, random_features(rng));
  const GateGradients gr = gate_backward(g, fw.cache, 0.0);
  for (double v : gr.w1) CHECK(v == 0.0);
  for (double v : gr.b1) CHECK(v == 0.0);
  for (double v : gr.w2) CHECK(v == 0.0);
  CHECK(gr.b2 == 0.0);
  CHECK(gr.omega_max_raw == 0.0);
  CHECK(gr.eps_raw == 0.0);
}

TEST_CASE("backward: zero network gives b2 gradient omega_max / 4") {
  GateParameters g = GateParameters::zeros(5);
  g.omega_max_raw = 1.3;
  const auto fw = gate_forward(g, GatingFeatures{});
  CHECK(gate_backward(g, fw.cache, 1.0).b2 == doctest::Approx(g.omega_max() * 0.25).epsilon(1e-14));
}

TEST_CASE("backward matches central finite differences") {
  std::mt19937_64 rng(2024);
  std::normal_distribution<double> n(0.0, 1.0);
  const double h = 1e-5;
  for (int trial = 0; trial < 50; ++trial) {
    const GateParameters g = random_gate(6, 0.2, 0.8, 500 + trial);
    const GatingFeatures u = random_features(rng);
    const double dl = n(rng);
    const auto fw = gate_forward(g, u, GateMode::train, rng);
    const auto& mask = fw.cache.dropout_mask;
    const GateGradients gr = gate_backward(g, fw.cache, dl);

    auto loss_of = [&](const GateParameters& p) { return dl * omega_oracle(p, u, mask); };
    auto numeric = [&](auto setter) {
      GateParameters up = g, down = g;
      setter(up, +h);
      setter(down, -h);
      return (loss_of(up) - loss_of(down)) / (2.0 * h);
    };
    for (std::size_t i = 0; i < g.w1.size(); ++i) {
      CHECK(finch::testing::grad_close(
          gr.w1[i], numeric([&](GateParameters& p, double d) { p.w1[i] += d; }), 1e-5));
    }
    for (std::size_t i = 0; i < g.hidden; ++i) {
      CHECK(finch::testing::grad_close(
          gr.b1[i], numeric([&](GateParameters& p, double d) { p.b1[i] += d; }), 1e-5));
      CHECK(finch::testing::grad_close(
          gr.w2[i], numeric([&](GateParameters& p, double d) { p.w2[i] += d; }), 1e-5));
    }
    CHECK(finch::testing::grad_close(gr.b2, numeric([](GateParameters& p, double d) { p.b2 += d; }),
                                     1e-5));
    CHECK(finch::testing::grad_close(
        gr.omega_max_raw, numeric([](GateParameters& p, double d) { p.omega_max_raw += d; }),
        1e-5));
    CHECK(finch::testing::grad_close(
        gr.eps_raw, numeric([](GateParameters& p, double d) { p.eps_raw += d; }), 1e-5));
  }
}

TEST_CASE("stale cache is a contract violation") {
  GateParameters g = random_gate(4, 0.1, 1.0, 1);
  const auto fw = gate_forward(g, GatingFeatures{});
  g.w2[0] += 1.0;
  CHECK_THROWS_AS(gate_backward(g, fw.cache, 1.0), ContractViolation);
  const GateParameters other = random_gate(5, 0.1, 1.0, 1);
  CHECK_THROWS_AS(gate_backward(other, fw.cache, 1.0), ContractViolation);
}

TEST_CASE("constant initialization") {
  GateParameters base = GateParameters::zeros(64);
  base.omega_max_raw = omega_max_to_raw(3.0);

  const GateParameters mid = init_constant_gate(base, base.omega_max() / 2 + base.epsilon(), 1);
  CHECK(std::abs(mid.b2) < 1e-12);
  for (double w : mid.w2) CHECK(w == 0.0);

  const GateParameters low = init_constant_gate(base, base.epsilon() + 1e-9, 2);
  CHECK(low.b2 < -20.0);
  CHECK(gate_forward(low, GatingFeatures{}).omega == doctest::Approx(base.epsilon()).epsilon(1e-6));

  const double target = 1.234;
  const GateParameters g = init_constant_gate(base, target, 3);
  double max_w1 = 0.0;
  for (double w : g.w1) max_w1 = std::max(max_w1, std::abs(w));
  CHECK(max_w1 > 0.0);
  CHECK(max_w1 < 0.1);
  std::mt19937_64 rng(6);
  for (int t = 0; t < 100; ++t) {
    CHECK(std::abs(gate_forward(g, random_features(rng)).omega - target) < 1e-9);
  }
  CHECK(init_constant_gate(base, target, 3) == g);
  CHECK_FALSE(init_constant_gate(base, target, 4) == g);

  CHECK_THROWS_AS(init_constant_gate(base, base.epsilon(), 1), InvalidInput);
  CHECK_THROWS_AS(init_constant_gate(base, base.omega_max() + base.epsilon(), 1), InvalidInput);
  CHECK_THROWS_AS(init_constant_gate(base, 50.0, 1), InvalidInput);
}
