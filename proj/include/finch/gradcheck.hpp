#pragma once

#include <cstddef>
#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "finch/gate.hpp"
#include "finch/model.hpp"
#include "finch/training.hpp"

namespace finch {

inline constexpr double kGradCheckStep = 1e-5;
inline constexpr double kGradCheckTolerance = 1e-4;
// Entries whose analytic and numerical values agree to this absolute level
// pass regardless of relative error (both are numerically zero).
inline constexpr double kGradCheckAbsFloor = 1e-10;

struct GradCheckEntry {
  std::string name;
  double analytic = 0.0;
  double numeric = 0.0;
  double rel_error = 0.0;
  bool pass = true;
};

struct GradCheckReport {
  std::string group;
  std::vector<GradCheckEntry> entries;
  double max_rel_error = 0.0;  // over all entries, including floor passes
  bool pass = true;
};

double relative_error(double analytic, double numeric);

/// Central differences for every head weight and bias.
GradCheckReport gradcheck_head(const AudioHead& head, std::span<const SampleRecord> records,
                               std::span<const std::size_t> batch,
                               double step = kGradCheckStep,
                               double tolerance = kGradCheckTolerance);

/// Stage-2 scalars: omega_raw, temp_raw, eps_raw.
GradCheckReport gradcheck_fixed_weight(const FixedWeightParams& params,
                                       std::span<const FusionSample> samples,
                                       std::span<const std::size_t> batch, double lambda_var,
                                       double step = kGradCheckStep,
                                       double tolerance = kGradCheckTolerance);

/// Every gate parameter plus temp_raw and eps_raw. Dropout masks are fixed by
/// `mask_seed` so the perturbed evaluations see the same network.
GradCheckReport gradcheck_adaptive(const GateParameters& gate,
                                   std::span<const FusionSample> samples,
                                   std::span<const std::size_t> batch, double lambda_var,
                                   GateMode mode, std::uint64_t mask_seed,
                                   double step = kGradCheckStep,
                                   double tolerance = kGradCheckTolerance);

/// Gate with weights drawn at the given scale, so that no block of the
/// gradient is trivially zero.
GateParameters random_gate(std::size_t hidden, double dropout_rate, double scale,
                           std::uint64_t seed);

}  // namespace finch
