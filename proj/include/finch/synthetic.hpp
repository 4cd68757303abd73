#pragma once

#include <cstddef>
#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "finch/core.hpp"
#include "finch/dataset.hpp"
#include "finch/features.hpp"

namespace finch {

enum class CorruptionMode { none, shuffle, uniform, confident_wrong };

CorruptionMode parse_corruption_mode(const std::string& name);
std::string to_string(CorruptionMode mode);

/// Generative benchmark with a known Bayes posterior.
///
///   y    ~ p(y)   (uniform unless class_prior_skew > 0)
///   cell ~ p(cell | y) ∝ exp(prior_peakedness * affinity[y][cell])
///   x    ~ N(mean_y + dependence_strength * offset_cell, I)
///
/// Each class has a home cell with affinity 1; all other affinities are
/// drawn from U[0, 0.8). The context of a sample is a deterministic function
/// of its cell.
struct SyntheticConfig {
  std::size_t n_classes = 16;
  std::size_t embed_dim = 16;
  std::size_t n_cells = 32;
  std::size_t n_samples = 10000;
  double class_sep = 3.0;
  double prior_peakedness = 3.0;
  CorruptionMode corruption = CorruptionMode::none;
  double corruption_fraction = 0.0;
  bool region_coupled = false;
  double dependence_strength = 0.0;
  // 0 gives the uniform class prior; larger values tilt p(y) ∝ exp(-skew * y / C).
  double class_prior_skew = 0.0;
  std::uint64_t seed = 0;

  void validate() const;
  bool operator==(const SyntheticConfig&) const = default;
};

/// Named configurations: "ci", "dependent", "heterogeneous".
SyntheticConfig synthetic_preset(const std::string& name);

/// The fixed parameters of the generative model, derived from the config seed.
class SyntheticModel {
 public:
  explicit SyntheticModel(const SyntheticConfig& config);

  const SyntheticConfig& config() const { return config_; }
  std::size_t n_classes() const { return config_.n_classes; }
  std::size_t n_cells() const { return config_.n_cells; }

  std::span<const double> class_prior() const { return class_prior_; }
  double cell_given_class(std::size_t y, std::size_t cell) const;
  std::span<const double> class_mean(std::size_t y) const;
  std::span<const double> cell_offset(std::size_t cell) const;
  const SpatioTemporalContext& cell_context(std::size_t cell) const { return contexts_[cell]; }

  // log N(x; mean_y + kappa * offset_cell, I) up to the shared constant.
  double log_likelihood(std::span<const double> x, std::size_t y, std::size_t cell) const;

  /// p(y | x), marginalizing the cell when embeddings depend on it.
  CategoricalDistribution audio_posterior(std::span<const double> x) const;
  /// p(y | cell).
  CategoricalDistribution context_posterior(std::size_t cell) const;
  /// p(y | x, cell) from the joint likelihood.
  CategoricalDistribution joint_posterior(std::span<const double> x, std::size_t cell) const;

 private:
  SyntheticConfig config_;
  std::vector<double> class_prior_;       // C
  std::vector<double> log_cell_given_y_;  // C x G
  std::vector<double> means_;             // C x D
  std::vector<double> offsets_;           // G x D
  std::vector<SpatioTemporalContext> contexts_;
};

struct SyntheticSample {
  SampleRecord record;
  std::size_t cell = 0;
  CategoricalDistribution audio_posterior;
  CategoricalDistribution context_posterior;  // as stored; corrupt_priors may replace it
  CategoricalDistribution bayes_posterior;    // true p(y | x, s)
  bool corrupted = false;
};

/// Draws config.n_samples samples (ids 0..N-1). No corruption is applied.
std::vector<SyntheticSample> generate(const SyntheticModel& model);
std::vector<SyntheticSample> generate(const SyntheticConfig& config);

/// Closed-form posterior normalize(p(y|x) p(y|s) / p(y)) from the true
/// conditionals. Only exact when embeddings and context are conditionally
/// independent given the class; throws InvalidInput otherwise.
CategoricalDistribution bayes_posterior(const SyntheticSample& sample,
                                        const SyntheticModel& model);

/// Replaces the stored context posterior of a seeded fraction of samples.
/// With region_coupled, the corrupted set is exactly the samples whose
/// longitude lies in the western `corruption_fraction` of the grid's
/// longitude range (the left half at 0.5).
void corrupt_priors(std::vector<SyntheticSample>& samples, const SyntheticConfig& config);

struct OmegaGridResult {
  double best_omega = 0.0;
  double best_loss = 0.0;
  std::vector<double> losses;  // one per grid point
};

/// Default grid: 101 points from 0 to 10.
std::vector<double> default_omega_grid();

inline constexpr double kOracleEpsilon = 1e-6;

/// Evaluates the cross-entropy of fuse(audio, prior, omega, T=1, epsilon) at
/// every grid point and returns the minimizer. Losses within 1e-12 of the
/// minimum count as ties and resolve to the smallest omega, so rounding noise
/// on a flat curve never moves the choice away from 0. The grid must
/// contain 0.
OmegaGridResult omega_grid_oracle(std::span<const double> audio_log_probs,
                                  std::span<const double> prior, std::size_t label,
                                  std::span<const double> grid,
                                  double epsilon = kOracleEpsilon);

// Converters to the file-level containers.
Dataset to_dataset(const std::vector<SyntheticSample>& samples, std::size_t n_classes,
                   std::size_t dim);
PriorTable to_prior_table(const std::vector<SyntheticSample>& samples);

}  // namespace finch
