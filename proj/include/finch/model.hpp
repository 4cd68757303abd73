#pragma once

#include <cstddef>
#include <cstdint>
#include <optional>
#include <span>
#include <vector>

#include "finch/core.hpp"
#include "finch/gate.hpp"

namespace finch {

struct TrainConfig {
  double lr = 1e-3;
  double weight_decay = 1e-2;
  std::size_t epochs = 30;
  std::size_t batch_size = 96;
  double warmup_fraction = 0.10;
  double lambda_var = 1e-3;
  std::uint64_t seed = 0;
  double val_fraction = 0.10;
  // Gate architecture and the omega_max the gate starts from in stage 3.
  std::size_t gate_hidden = kDefaultGateHidden;
  double gate_dropout = kDefaultGateDropout;
  double omega_max_init = 4.0;
  // Stage-2 starting weight. 0 picks it from a coarse grid by training loss.
  double omega_init = 0.0;

  void validate() const;
  bool operator==(const TrainConfig&) const = default;
};

/// Linear classifier on frozen embeddings: logits = A x + b.
struct AudioHead {
  std::size_t n_classes = 0;
  std::size_t dim = 0;
  std::vector<double> weights;  // n_classes x dim, row-major
  std::vector<double> bias;     // n_classes

  static AudioHead zeros(std::size_t n_classes, std::size_t dim);

  std::vector<double> logits(std::span<const double> embedding) const;
  // log-softmax of the logits.
  std::vector<double> log_probs(std::span<const double> embedding) const;

  void validate() const;
  bool operator==(const AudioHead&) const = default;
};

enum class Stage : int { audio_only = 1, fixed_weight = 2, adaptive = 3 };

/// Everything needed to rebuild a trained model of any stage.
///
/// Stage 1 uses only the head. Stage 2 adds one scalar fusion weight stored
/// as omega = softplus(omega_raw). Stage 3 adds the gate; its temp_raw and
/// eps_raw mirror the checkpoint-level values.
struct StageCheckpoint {
  Stage stage = Stage::audio_only;
  AudioHead head;
  double omega_raw = 0.0;
  std::optional<GateParameters> gate;
  double temp_raw = 0.0;
  double eps_raw = 0.0;
  TrainConfig config;
  double best_val_accuracy = 0.0;
  std::size_t best_epoch = 0;
  std::uint64_t seed = 0;

  double omega() const { return softplus(omega_raw); }
  double temperature() const;
  double epsilon() const;

  // Checks that the content matches the stage tag.
  void validate() const;
  bool operator==(const StageCheckpoint&) const = default;
};

}  // namespace finch
