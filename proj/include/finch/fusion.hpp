#pragma once

#include <cstddef>
#include <span>
#include <vector>

#include "finch/core.hpp"

namespace finch {

/// Operands of the tempered log-linear fusion rule
///   score(y) = audio_log_probs(y) / T + omega * ln(prior(y) + epsilon).
///
/// audio_log_probs is the log of a valid distribution (entries may be -inf
/// where the audio model assigns zero mass). epsilon may be 0, which makes the
/// rule an exact product of experts.
struct FusionInputs {
  std::span<const double> audio_log_probs;
  std::span<const double> prior;
  double omega = 0.0;
  double temperature = 1.0;
  double epsilon = 0.0;
};

CategoricalDistribution fuse(const FusionInputs& inputs);

struct FusionGradients {
  std::vector<double> audio_log_probs;
  double omega = 0.0;
  double temperature = 0.0;
  double epsilon = 0.0;
};

struct FusionLoss {
  double loss = 0.0;  // cross-entropy of the fused distribution, nats
  CategoricalDistribution fused;
  FusionGradients grads;
};

/// Fuses, scores the result against `label` with cross-entropy, and returns
/// the analytic gradients with respect to every fusion operand.
FusionLoss fuse_gradients(const FusionInputs& inputs, std::size_t label);

}  // namespace finch
