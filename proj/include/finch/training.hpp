#pragma once

#include <array>
#include <cstddef>
#include <cstdint>
#include <functional>
#include <span>
#include <string>
#include <vector>

#include "finch/core.hpp"
#include "finch/dataset.hpp"
#include "finch/features.hpp"
#include "finch/gate.hpp"
#include "finch/model.hpp"

namespace finch {

// Probability floor applied before taking the log in cross_entropy.
inline constexpr double kCrossEntropyFloor = 1e-12;

/// -ln p(label), with p(label) floored at 1e-12.
double cross_entropy(const CategoricalDistribution& p, std::size_t label);

struct VariancePenalty {
  double loss = 0.0;
  std::vector<double> grads;  // d loss / d omega_i
};

/// -lambda * population variance of the batch's fusion weights, with its
/// gradient. A batch of one contributes nothing.
VariancePenalty variance_penalty(std::span<const double> omegas, double lambda_var);

// ---------------------------------------------------------------------------
// Data split

struct DataSplit {
  std::vector<std::size_t> train;
  std::vector<std::size_t> val;
  bool stratified = true;
};

/// Validation split stratified by label. Falls back to a plain random split
/// when some class is too small to contribute to both sides.
DataSplit split_train_val(const Dataset& dataset, double val_fraction, std::uint64_t seed);

// ---------------------------------------------------------------------------
// Inference

enum class PredictMode {
  full,        // the checkpoint's own fusion rule
  audio_only,  // head softmax, no fusion
  gate_zero,   // fusion with omega forced to 0 (keeps the learned temperature)
};

struct Prediction {
  CategoricalDistribution audio;
  CategoricalDistribution fused;
  double omega = 0.0;
};

Prediction predict(const StageCheckpoint& ckpt, const SampleRecord& record,
                   const CategoricalDistribution& prior, PredictMode mode = PredictMode::full);

/// Fusion with a fixed scalar weight in place of the checkpoint's own rule,
/// at temperature 1 and the checkpoint's epsilon. omega = 0 reproduces the
/// audio-only prediction exactly.
Prediction predict_fixed_omega(const StageCheckpoint& ckpt, const SampleRecord& record,
                               const CategoricalDistribution& prior, double omega);

// ---------------------------------------------------------------------------
// Batch losses with analytic gradients. Training and gradient checking both
// go through these.

struct HeadGradients {
  std::vector<double> weights;
  std::vector<double> bias;
};

/// Mean softmax cross-entropy of the head over `batch` (indices into records).
double head_batch_loss(const AudioHead& head, std::span<const SampleRecord> records,
                       std::span<const std::size_t> batch, HeadGradients* grads);

/// Per-sample quantities that stay fixed once the head is frozen.
struct FusionSample {
  std::vector<double> audio_log_probs;
  std::vector<double> prior;
  GatingFeatures features;
  std::size_t label = 0;
};

FusionSample make_fusion_sample(const AudioHead& head, const SampleRecord& record,
                                const CategoricalDistribution& prior);

struct FixedWeightParams {
  double omega_raw = 0.0;
  double temp_raw = 0.0;
  double eps_raw = 0.0;
};

struct FixedWeightGradients {
  double omega_raw = 0.0;
  double temp_raw = 0.0;
  double eps_raw = 0.0;
};

/// Stage-2 objective: mean fused cross-entropy plus the variance penalty
/// (identically zero for a shared weight, kept so both stages optimize the
/// same functional form).
double fixed_weight_batch_loss(const FixedWeightParams& params,
                               std::span<const FusionSample> samples,
                               std::span<const std::size_t> batch, double lambda_var,
                               FixedWeightGradients* grads);

struct AdaptiveGradients {
  // gate.eps_raw holds the full epsilon gradient: the offset inside omega
  // plus the smoothing term of the fusion rule.
  GateGradients gate;
  double temp_raw = 0.0;
};

struct AdaptiveBatchResult {
  double loss = 0.0;
  std::vector<double> omegas;
};

/// Stage-3 objective: mean fused cross-entropy with per-sample gate weights
/// plus the variance penalty. Dropout masks are drawn from `mask_seed`, so
/// repeated calls with the same seed see the same masks.
AdaptiveBatchResult adaptive_batch_loss(const GateParameters& gate,
                                        std::span<const FusionSample> samples,
                                        std::span<const std::size_t> batch, double lambda_var,
                                        GateMode mode, std::uint64_t mask_seed,
                                        AdaptiveGradients* grads);

// ---------------------------------------------------------------------------
// Three-stage pipeline

struct EpochMetrics {
  std::size_t epoch = 0;  // 0 is the initialization, before any update (train_loss 0)
  double train_loss = 0.0;
  double val_accuracy = 0.0;
  double lr = 0.0;
  double mean_omega = 0.0;
  double var_omega = 0.0;

  bool operator==(const EpochMetrics&) const = default;
};

struct TrainResult {
  StageCheckpoint best;
  std::vector<EpochMetrics> history;
  std::vector<std::string> warnings;
};

using EpochCallback = std::function<void(const StageCheckpoint&, const EpochMetrics&)>;

/// Softmax-regression head on frozen embeddings.
TrainResult train_stage1(const Dataset& dataset, const TrainConfig& config,
                         const EpochCallback& on_epoch = {});

/// Candidate starting weights for stage 2 when the config leaves it open.
inline constexpr std::array<double, 9> kWarmStartGrid{0.01, 0.02, 0.05, 0.1, 0.2,
                                                      0.35, 0.5, 1.0, 2.0};

/// Learns one shared fusion weight plus temperature and epsilon; the head is
/// copied from stage 1 and never modified.
TrainResult train_stage2(const Dataset& dataset, const PriorTable& priors,
                         const StageCheckpoint& stage1, const TrainConfig& config,
                         const EpochCallback& on_epoch = {});

/// Replaces the shared weight with the gating network, initialized to output
/// the stage-2 weight everywhere. The head stays frozen.
TrainResult train_stage3(const Dataset& dataset, const PriorTable& priors,
                         const StageCheckpoint& stage2, const TrainConfig& config,
                         const EpochCallback& on_epoch = {});

}  // namespace finch
