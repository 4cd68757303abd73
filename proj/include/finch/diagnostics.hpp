#pragma once

#include <cstddef>
#include <cstdint>
#include <span>
#include <vector>

#include "finch/dataset.hpp"

namespace finch {

/// Dense row-major matrix, just enough structure for the probe.
struct Matrix {
  std::size_t rows = 0;
  std::size_t cols = 0;
  std::vector<double> data;

  Matrix() = default;
  Matrix(std::size_t r, std::size_t c) : rows(r), cols(c), data(r * c, 0.0) {}

  double& operator()(std::size_t r, std::size_t c) { return data[r * cols + c]; }
  double operator()(std::size_t r, std::size_t c) const { return data[r * cols + c]; }
  std::span<const double> row(std::size_t r) const { return {&data[r * cols], cols}; }

  Matrix select_rows(std::span<const std::size_t> indices) const;
};

inline constexpr double kDefaultRidge = 1e-3;

/// Ridge regression Y ≈ X W + intercept. The intercept is not penalized: X
/// and Y are centered on their training means, so a probe with no usable
/// signal reduces to the mean predictor.
struct LinearProbe {
  Matrix weights;                 // D x K
  std::vector<double> x_mean;     // D
  std::vector<double> y_mean;     // K, the training-split mean

  Matrix predict(const Matrix& x) const;
};

LinearProbe fit_linear_probe(const Matrix& x, const Matrix& y, double ridge = kDefaultRidge);

/// 1 - SS_res / SS_tot where SS_tot is measured against `baseline_mean`
/// (the training mean). Can be negative. Returns 0 when SS_tot is 0.
double r2_score(std::span<const double> y_true, std::span<const double> y_pred,
                double baseline_mean);

/// mean(a) / sd(a) with the n-1 standard deviation. Throws InvalidInput for
/// fewer than two values or zero spread.
double cohens_d(std::span<const double> a);

/// Held-out evaluation of a probe against the train-mean predictor.
struct ProbeEvaluation {
  double r2 = 0.0;                     // mean over target columns
  double improvement = 0.0;            // mean per-sample squared-error gain
  std::vector<double> sample_gains;    // baseline SE - probe SE, per held-out row
};

/// One class worth of probe data and its fixed train / held-out split.
struct ProbeBlock {
  Matrix x;
  Matrix y;
  std::vector<std::size_t> train;
  std::vector<std::size_t> test;
};

/// Seeded split (80 / 20 by default) of n rows.
ProbeBlock make_probe_block(Matrix x, Matrix y, std::uint64_t seed, double test_fraction = 0.2);

ProbeEvaluation evaluate_probe(const ProbeBlock& block, double ridge = kDefaultRidge);
// Same, with the rows of Y permuted by `perm` relative to X.
ProbeEvaluation evaluate_probe(const ProbeBlock& block, std::span<const std::size_t> perm,
                               double ridge = kDefaultRidge);

/// Permutation p-value for the statistic "mean held-out improvement,
/// averaged over blocks". Each permutation shuffles Y rows within every
/// block and refits. p = (1 + #{perm >= observed}) / (1 + n_perm).
double permutation_test(std::span<const ProbeBlock> blocks, std::size_t n_perm,
                        std::uint64_t seed, double ridge = kDefaultRidge);
double permutation_test(const Matrix& x, const Matrix& y, std::size_t n_perm,
                        std::uint64_t seed, double ridge = kDefaultRidge);

struct DependenceReport {
  std::vector<std::size_t> classes_tested;
  std::vector<double> per_class_r2;
  std::vector<double> per_class_improvement;
  double mean_r2 = 0.0;
  double cohens_d = 0.0;
  double permutation_p = 1.0;
  double frac_positive_improvement = 0.0;
  double frac_r2_above_005 = 0.0;
  std::size_t n_classes_tested = 0;
};

struct DependenceOptions {
  std::size_t min_samples_per_class = 50;
  std::size_t n_perm = 199;
  double ridge = kDefaultRidge;
  // Regress the whole prior row instead of its [max, entropy, margin].
  bool full_row = false;
  std::uint64_t seed = 0;
};

/// Recomputes the aggregate fields from the per-class vectors.
void aggregate_dependence_report(DependenceReport& report);

DependenceReport dependence_report(const Dataset& dataset, const PriorTable& priors,
                                   const DependenceOptions& options = {});

}  // namespace finch
