#include "finch/optim.hpp"

#include <cmath>
#include <numbers>

#include "finch/error.hpp"

namespace finch {

void adamw_step(AdamState& state, std::span<double> params, std::span<const double> grads,
                double lr, double weight_decay, const AdamWConfig& config) {
  if (params.size() != grads.size()) {
    throw DimensionError("adamw_step: parameter and gradient sizes differ");
  }
  if (state.m.empty() && state.v.empty()) {
    state.m.assign(params.size(), 0.0);
    state.v.assign(params.size(), 0.0);
  }
  if (state.m.size() != params.size() || state.v.size() != params.size()) {
    throw DimensionError("adamw_step: optimizer state does not match parameters");
  }
  ++state.step;
  const double t = static_cast<double>(state.step);
  const double bias1 = 1.0 - std::pow(config.beta1, t);
  const double bias2 = 1.0 - std::pow(config.beta2, t);
  for (std::size_t i = 0; i < params.size(); ++i) {
    const double g = grads[i];
    state.m[i] = config.beta1 * state.m[i] + (1.0 - config.beta1) * g;
    state.v[i] = config.beta2 * state.v[i] + (1.0 - config.beta2) * g * g;
    const double m_hat = state.m[i] / bias1;
    const double v_hat = state.v[i] / bias2;
    const double p = params[i];
    params[i] = p - lr * (m_hat / (std::sqrt(v_hat) + config.eps)) - lr * weight_decay * p;
  }
}

double cosine_warmup_lr(std::uint64_t step, std::uint64_t total_steps, double base_lr,
                        double warmup_fraction) {
  if (total_steps == 0 || step > total_steps) {
    throw InvalidInput("cosine_warmup_lr: step outside [0, total_steps]");
  }
  const auto warmup = static_cast<std::uint64_t>(
      std::ceil(warmup_fraction * static_cast<double>(total_steps)));
  if (step < warmup) {
    return base_lr * static_cast<double>(step) / static_cast<double>(warmup);
  }
  if (total_steps == warmup) {
    return base_lr;
  }
  const double progress =
      static_cast<double>(step - warmup) / static_cast<double>(total_steps - warmup);
  return base_lr * 0.5 * (1.0 + std::cos(std::numbers::pi * progress));
}

}  // namespace finch
