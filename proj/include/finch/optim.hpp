#pragma once

#include <cstdint>
#include <span>
#include <vector>

namespace finch {

struct AdamWConfig {
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

// Moment estimates for one parameter group.
struct AdamState {
  std::vector<double> m;
  std::vector<double> v;
  std::uint64_t step = 0;
};

/// One AdamW update with bias correction and decoupled weight decay:
///   p <- p - lr * m_hat / (sqrt(v_hat) + eps) - lr * weight_decay * p
/// Pass weight_decay = 0 for parameters that must not be decayed.
void adamw_step(AdamState& state, std::span<double> params, std::span<const double> grads,
                double lr, double weight_decay, const AdamWConfig& config = {});

/// Linear warmup over ceil(warmup_fraction * total_steps) steps followed by
/// cosine decay to zero at total_steps.
double cosine_warmup_lr(std::uint64_t step, std::uint64_t total_steps, double base_lr,
                        double warmup_fraction);

}  // namespace finch
