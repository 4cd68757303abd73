#pragma once

#include <array>
#include <cstddef>
#include <span>
#include <vector>

#include "finch/core.hpp"
#include "finch/dataset.hpp"
#include "finch/features.hpp"
#include "finch/model.hpp"

namespace finch {

struct DenseLayer {
  std::size_t in = 0;
  std::size_t out = 0;
  std::vector<double> weights;  // out x in, row-major
  std::vector<double> bias;     // out

  bool operator==(const DenseLayer&) const = default;
};

/// Metadata-only classifier: encode_metadata(ctx) -> 128 -> 128 -> C with
/// ReLU hidden layers. Once trained it is frozen and only used to fill prior
/// tables.
class ContextMlp {
 public:
  static constexpr std::size_t kHidden = 128;

  ContextMlp() = default;
  ContextMlp(std::size_t n_classes, std::uint64_t seed);
  explicit ContextMlp(std::array<DenseLayer, 3> layers);

  std::size_t n_classes() const { return layers_[2].out; }
  const std::array<DenseLayer, 3>& layers() const { return layers_; }

  std::vector<double> logits(const SpatioTemporalContext& ctx) const;
  CategoricalDistribution predict(const SpatioTemporalContext& ctx) const;

  // Mean cross-entropy over `batch`; fills gradients (same layout as the
  // layers) when requested.
  double batch_loss(std::span<const SampleRecord> records, std::span<const std::size_t> batch,
                    std::array<DenseLayer, 3>* grads) const;

  std::array<DenseLayer, 3>& mutable_layers() { return layers_; }

  bool operator==(const ContextMlp&) const = default;

 private:
  std::array<DenseLayer, 3> layers_;
};

struct ContextMlpResult {
  ContextMlp model;
  double best_val_accuracy = 0.0;
  std::size_t best_epoch = 0;
};

/// Trains with the shared optimizer and schedule; model selection on
/// validation accuracy, as for the fusion stages.
ContextMlpResult train_context_mlp(const Dataset& dataset, const TrainConfig& config);

/// One row per record, keyed by sample id.
PriorTable prior_table_from_model(const ContextMlp& model, const Dataset& dataset);

}  // namespace finch
