#pragma once

#include <cstddef>
#include <cstdint>
#include <random>
#include <vector>

#include "finch/features.hpp"

namespace finch {

inline constexpr double kOmegaMaxCeiling = 10.0;
inline constexpr double kOmegaMaxFloor = 1e-6;
inline constexpr double kEpsilonMin = 1e-8;
inline constexpr double kEpsilonMax = 1e-2;

inline constexpr std::size_t kDefaultGateHidden = 64;
inline constexpr double kDefaultGateDropout = 0.1;

// Bounded scalars shared by the gate and the fixed-weight stage.
double omega_max_from_raw(double raw);
double temperature_from_raw(double raw);
double epsilon_from_raw(double raw);
double omega_max_to_raw(double omega_max);
double epsilon_to_raw(double epsilon);

/// Weights of the two-layer gating MLP plus the learnable fusion scalars.
///
/// The MLP maps the 12 gating features through a ReLU hidden layer (with
/// inverted dropout in training mode) to a single logit z, and the fusion
/// weight is omega = omega_max() * sigmoid(z) + epsilon(). The three scalar
/// parameters are stored unconstrained and mapped through sigmoid/exp so that
/// omega_max() stays in (1e-6, 10), temperature() > 0 and epsilon() stays in
/// (1e-8, 1e-2).
struct GateParameters {
  std::size_t hidden = kDefaultGateHidden;
  double dropout_rate = kDefaultGateDropout;
  std::vector<double> w1;  // hidden x 12, row-major
  std::vector<double> b1;  // hidden
  std::vector<double> w2;  // hidden
  double b2 = 0.0;
  double omega_max_raw = 0.0;
  double temp_raw = 0.0;
  double eps_raw = 0.0;

  /// All-zero network of the given width.
  static GateParameters zeros(std::size_t hidden = kDefaultGateHidden,
                              double dropout_rate = kDefaultGateDropout);

  double omega_max() const { return omega_max_from_raw(omega_max_raw); }
  double temperature() const { return temperature_from_raw(temp_raw); }
  double epsilon() const { return epsilon_from_raw(eps_raw); }

  std::size_t network_parameter_count() const { return hidden * (GatingFeatures::kSize + 2) + 1; }

  // Throws DimensionError on shape mismatch, NumericError on non-finite values.
  void validate() const;

  // Cheap content hash used to detect stale forward caches.
  std::uint64_t fingerprint() const;

  bool operator==(const GateParameters&) const = default;
};

enum class GateMode { train, eval };

struct GateForwardCache {
  GatingFeatures input;
  std::vector<double> pre_activation;   // w1 u + b1
  std::vector<double> activation;       // relu(pre_activation)
  std::vector<double> dropout_mask;     // 0 or 1/(1-rate) in train mode, 1 in eval
  double logit = 0.0;                   // argument of the sigmoid
  double omega = 0.0;
  std::uint64_t params_fingerprint = 0;
};

struct GateForward {
  double omega = 0.0;
  GateForwardCache cache;
};

GateForward gate_forward(const GateParameters& params, const GatingFeatures& u, GateMode mode,
                         std::mt19937_64& rng);
// Eval-mode convenience; deterministic.
GateForward gate_forward(const GateParameters& params, const GatingFeatures& u);

struct GateGradients {
  std::vector<double> w1;
  std::vector<double> b1;
  std::vector<double> w2;
  double b2 = 0.0;
  double omega_max_raw = 0.0;
  double eps_raw = 0.0;  // through the +epsilon() offset of omega

  static GateGradients zeros(std::size_t hidden);
  GateGradients& operator+=(const GateGradients& other);
};

/// Gradients of a scalar loss with respect to every gate parameter, given
/// dL/domega for the forward pass recorded in `cache`. Applies the cached
/// dropout mask. Throws ContractViolation when the cache came from different
/// parameters.
GateGradients gate_backward(const GateParameters& params, const GateForwardCache& cache,
                            double dloss_domega);

/// Sets w2 = 0 and b2 so that the gate outputs omega_target for every input,
/// and draws w1, b1 from N(0, 0.01^2) so training can break the symmetry.
GateParameters init_constant_gate(GateParameters params, double omega_target,
                                  std::uint64_t seed);

}  // namespace finch
