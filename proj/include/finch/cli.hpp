#pragma once

#include <filesystem>
#include <iosfwd>
#include <optional>
#include <string>
#include <vector>

#include "finch/dataset.hpp"
#include "finch/metrics.hpp"
#include "finch/model.hpp"
#include "finch/synthetic.hpp"
#include "finch/training.hpp"

namespace finch {

/// Runs one subcommand. `args` excludes the program name. Returns the
/// process exit code: 0 on success, 1 on a runtime failure, 2 on bad usage.
int run_cli(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

/// Predictions of a checkpoint over a dataset. `priors` may be null, in
/// which case every sample sees the uniform prior.
std::vector<Prediction> predict_dataset(const StageCheckpoint& ckpt, const Dataset& dataset,
                                        const PriorTable* priors, PredictMode mode);

EvalReport evaluate_predictions(const std::vector<Prediction>& preds, const Dataset& dataset,
                                bool audio_only);

struct SweepRow {
  std::string label;  // the omega value, or "adaptive" / "learned"
  std::optional<double> omega;
  double accuracy = 0.0;
  double cmap = 0.0;
};

/// One row per fixed omega (temperature 1, the checkpoint's epsilon), then a
/// row for the checkpoint's own rule when it is a fusion stage.
std::vector<SweepRow> sweep_omega(const StageCheckpoint& ckpt, const Dataset& dataset,
                                  const PriorTable& priors, const std::vector<double>& grid);

struct SynthOutputs {
  std::filesystem::path train_data;
  std::filesystem::path train_priors;
  std::filesystem::path test_data;
  std::filesystem::path test_priors;
};

/// Generates, corrupts and splits a synthetic dataset into train/test files
/// under `out_dir`.
SynthOutputs write_synthetic_split(const SyntheticConfig& config, double test_fraction,
                                   const std::filesystem::path& out_dir);

}  // namespace finch
