#include "finch/gate.hpp"

#include <bit>
#include <cmath>
#include <string>

#include "finch/core.hpp"
#include "finch/error.hpp"

namespace finch {

namespace {

constexpr std::size_t kInputs = GatingFeatures::kSize;

std::uint64_t mix(std::uint64_t h, double v) {
  h ^= std::bit_cast<std::uint64_t>(v);
  return h * 0x100000001b3ULL;
}

}  // namespace

double omega_max_from_raw(double raw) {
  return kOmegaMaxFloor + (kOmegaMaxCeiling - kOmegaMaxFloor) * sigmoid(raw);
}

double temperature_from_raw(double raw) { return std::exp(raw); }

double epsilon_from_raw(double raw) {
  return kEpsilonMin + (kEpsilonMax - kEpsilonMin) * sigmoid(raw);
}

double omega_max_to_raw(double omega_max) {
  if (!(omega_max > kOmegaMaxFloor && omega_max < kOmegaMaxCeiling)) {
    throw InvalidInput("omega_max must lie in (1e-6, 10)");
  }
  return logit((omega_max - kOmegaMaxFloor) / (kOmegaMaxCeiling - kOmegaMaxFloor));
}

double epsilon_to_raw(double epsilon) {
  if (!(epsilon > kEpsilonMin && epsilon < kEpsilonMax)) {
    throw InvalidInput("epsilon must lie in (1e-8, 1e-2)");
  }
  return logit((epsilon - kEpsilonMin) / (kEpsilonMax - kEpsilonMin));
}

GateParameters GateParameters::zeros(std::size_t hidden, double dropout_rate) {
  if (hidden == 0) {
    throw InvalidInput("gate hidden width must be positive");
  }
  if (!(dropout_rate >= 0.0 && dropout_rate < 1.0)) {
    throw InvalidInput("dropout rate must lie in [0, 1)");
  }
  GateParameters p;
  p.hidden = hidden;
  p.dropout_rate = dropout_rate;
  p.w1.assign(hidden * kInputs, 0.0);
  p.b1.assign(hidden, 0.0);
  p.w2.assign(hidden, 0.0);
  return p;
}

void GateParameters::validate() const {
  if (hidden == 0 || w1.size() != hidden * kInputs || b1.size() != hidden ||
      w2.size() != hidden) {
    throw DimensionError("gate parameter shapes do not match hidden width " +
                         std::to_string(hidden));
  }
  if (!(dropout_rate >= 0.0 && dropout_rate < 1.0)) {
    throw InvalidInput("dropout rate must lie in [0, 1)");
  }
  auto finite = [](const std::vector<double>& v) {
    for (double x : v) {
      if (!std::isfinite(x)) {
        return false;
      }
    }
    return true;
  };
  if (!finite(w1) || !finite(b1) || !finite(w2) || !std::isfinite(b2) ||
      !std::isfinite(omega_max_raw) || !std::isfinite(temp_raw) || !std::isfinite(eps_raw)) {
    throw NumericError("gate parameters contain non-finite values");
  }
}

std::uint64_t GateParameters::fingerprint() const {
  std::uint64_t h = 0xcbf29ce484222325ULL ^ hidden;
  for (double v : w1) h = mix(h, v);
  for (double v : b1) h = mix(h, v);
  for (double v : w2) h = mix(h, v);
  h = mix(h, b2);
  h = mix(h, omega_max_raw);
  h = mix(h, eps_raw);
  h = mix(h, dropout_rate);
  return h;
}

GateForward gate_forward(const GateParameters& params, const GatingFeatures& u, GateMode mode,
                         std::mt19937_64& rng) {
  params.validate();
  const std::size_t hidden = params.hidden;

  GateForward out;
  GateForwardCache& c = out.cache;
  c.input = u;
  c.pre_activation.resize(hidden);
  c.activation.resize(hidden);
  c.dropout_mask.assign(hidden, 1.0);

  const bool drop = mode == GateMode::train && params.dropout_rate > 0.0;
  std::uniform_real_distribution<double> unif(0.0, 1.0);
  const double keep_scale = 1.0 / (1.0 - params.dropout_rate);

  double z = params.b2;
  for (std::size_t j = 0; j < hidden; ++j) {
    double h = params.b1[j];
    const double* row = &params.w1[j * kInputs];
    for (std::size_t k = 0; k < kInputs; ++k) {
      h += row[k] * u.values[k];
    }
    c.pre_activation[j] = h;
    c.activation[j] = h > 0.0 ? h : 0.0;
    if (drop) {
      c.dropout_mask[j] = unif(rng) < params.dropout_rate ? 0.0 : keep_scale;
    }
    z += params.w2[j] * c.activation[j] * c.dropout_mask[j];
  }
  c.logit = z;
  c.omega = params.omega_max() * sigmoid(z) + params.epsilon();
  c.params_fingerprint = params.fingerprint();
  out.omega = c.omega;
  return out;
}

GateForward gate_forward(const GateParameters& params, const GatingFeatures& u) {
  std::mt19937_64 unused(0);
  return gate_forward(params, u, GateMode::eval, unused);
}

GateGradients GateGradients::zeros(std::size_t hidden) {
  GateGradients g;
  g.w1.assign(hidden * kInputs, 0.0);
  g.b1.assign(hidden, 0.0);
  g.w2.assign(hidden, 0.0);
  return g;
}

GateGradients& GateGradients::operator+=(const GateGradients& other) {
  if (other.w1.size() != w1.size() || other.w2.size() != w2.size()) {
    throw DimensionError("gate gradient shapes differ");
  }
  for (std::size_t i = 0; i < w1.size(); ++i) w1[i] += other.w1[i];
  for (std::size_t i = 0; i < b1.size(); ++i) b1[i] += other.b1[i];
  for (std::size_t i = 0; i < w2.size(); ++i) w2[i] += other.w2[i];
  b2 += other.b2;
  omega_max_raw += other.omega_max_raw;
  eps_raw += other.eps_raw;
  return *this;
}

GateGradients gate_backward(const GateParameters& params, const GateForwardCache& cache,
                            double dloss_domega) {
  if (cache.pre_activation.size() != params.hidden ||
      cache.params_fingerprint != params.fingerprint()) {
    throw ContractViolation("gate_backward: cache does not belong to these parameters");
  }
  const std::size_t hidden = params.hidden;
  GateGradients g = GateGradients::zeros(hidden);

  const double s = sigmoid(cache.logit);
  const double sm = sigmoid(params.omega_max_raw);
  const double se = sigmoid(params.eps_raw);

  g.omega_max_raw = dloss_domega * s * (kOmegaMaxCeiling - kOmegaMaxFloor) * sm * (1.0 - sm);
  g.eps_raw = dloss_domega * (kEpsilonMax - kEpsilonMin) * se * (1.0 - se);

  const double dz = dloss_domega * params.omega_max() * s * (1.0 - s);
  g.b2 = dz;
  for (std::size_t j = 0; j < hidden; ++j) {
    const double dropped = cache.activation[j] * cache.dropout_mask[j];
    g.w2[j] = dz * dropped;
    if (cache.pre_activation[j] <= 0.0) {
      continue;
    }
    const double dh = dz * params.w2[j] * cache.dropout_mask[j];
    g.b1[j] = dh;
    double* row = &g.w1[j * kInputs];
    for (std::size_t k = 0; k < kInputs; ++k) {
      row[k] = dh * cache.input.values[k];
    }
  }
  return g;
}

GateParameters init_constant_gate(GateParameters params, double omega_target,
                                  std::uint64_t seed) {
  params.validate();
  const double eps = params.epsilon();
  const double omax = params.omega_max();
  if (!(omega_target > eps && omega_target < omax + eps)) {
    throw InvalidInput("init_constant_gate: target " + std::to_string(omega_target) +
                       " outside (epsilon, omega_max + epsilon)");
  }
  const double frac = (omega_target - eps) / omax;
  params.b2 = logit(frac);
  if (!std::isfinite(params.b2)) {
    throw InvalidInput("init_constant_gate: target not representable");
  }
  std::fill(params.w2.begin(), params.w2.end(), 0.0);

  std::mt19937_64 rng(seed);
  std::normal_distribution<double> noise(0.0, 0.01);
  for (double& w : params.w1) w = noise(rng);
  for (double& b : params.b1) b = noise(rng);
  return params;
}

}  // namespace finch
