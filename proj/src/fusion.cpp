#include "finch/fusion.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

#include "finch/error.hpp"

namespace finch {

namespace {

constexpr double kLogFloor = 1e-12;

void validate(const FusionInputs& in) {
  const std::size_t c = in.audio_log_probs.size();
  if (c < 2 || in.prior.size() != c) {
    throw DimensionError("fuse: audio and prior must share a class count >= 2");
  }
  if (!(in.temperature > 0.0) || !std::isfinite(in.temperature)) {
    throw InvalidInput("fuse: temperature must be positive and finite");
  }
  if (!(in.epsilon >= 0.0) || !std::isfinite(in.epsilon)) {
    throw InvalidInput("fuse: epsilon must be nonnegative and finite");
  }
  if (!(in.omega >= 0.0) || !std::isfinite(in.omega)) {
    throw InvalidInput("fuse: omega must be nonnegative and finite");
  }
  double audio_mass = 0.0;
  double prior_mass = 0.0;
  for (std::size_t i = 0; i < c; ++i) {
    const double lp = in.audio_log_probs[i];
    if (std::isnan(lp) || lp > 0.0) {
      throw InvalidInput("fuse: audio log-probabilities must be <= 0");
    }
    audio_mass += std::exp(lp);
    const double p = in.prior[i];
    if (!std::isfinite(p) || p < 0.0) {
      throw InvalidInput("fuse: prior entries must be finite and nonnegative");
    }
    prior_mass += p;
  }
  if (std::abs(audio_mass - 1.0) > kRenormalizeTolerance) {
    throw InvalidInput("fuse: exp(audio_log_probs) does not sum to 1");
  }
  if (std::abs(prior_mass - 1.0) > kRenormalizeTolerance) {
    throw InvalidInput("fuse: prior does not sum to 1");
  }
}

std::vector<double> fused_scores(const FusionInputs& in) {
  const std::size_t c = in.audio_log_probs.size();
  std::vector<double> scores(c);
  for (std::size_t i = 0; i < c; ++i) {
    scores[i] = in.audio_log_probs[i] / in.temperature;
    // omega == 0 must leave the audio scores untouched, including where
    // prior + epsilon == 0 (0 * -inf is NaN).
    if (in.omega != 0.0) {
      scores[i] += in.omega * std::log(in.prior[i] + in.epsilon);
    }
  }
  return scores;
}

}  // namespace

CategoricalDistribution fuse(const FusionInputs& inputs) {
  validate(inputs);
  return softmax(fused_scores(inputs));
}

FusionLoss fuse_gradients(const FusionInputs& inputs, std::size_t label) {
  validate(inputs);
  const std::size_t c = inputs.audio_log_probs.size();
  if (label >= c) {
    throw InvalidInput("fuse_gradients: label out of range");
  }
  CategoricalDistribution fused = softmax(fused_scores(inputs));

  FusionGradients g;
  g.audio_log_probs.assign(c, 0.0);
  const double inv_t = 1.0 / inputs.temperature;
  double dscore_sum_audio = 0.0;
  for (std::size_t y = 0; y < c; ++y) {
    const double residual = fused[y] - (y == label ? 1.0 : 0.0);
    if (residual == 0.0) {
      continue;
    }
    g.audio_log_probs[y] = residual * inv_t;
    dscore_sum_audio += residual * inputs.audio_log_probs[y];
    const double shifted = inputs.prior[y] + inputs.epsilon;
    g.omega += residual * std::log(shifted);
    g.epsilon += residual * inputs.omega / shifted;
  }
  g.temperature = -inv_t * inv_t * dscore_sum_audio;

  const double loss = -std::log(std::max(fused[label], kLogFloor));
  return {loss, std::move(fused), std::move(g)};
}

}  // namespace finch
