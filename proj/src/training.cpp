#include "finch/training.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <limits>
#include <numeric>
#include <random>
#include <string>

#include "finch/error.hpp"
#include "finch/fusion.hpp"
#include "finch/optim.hpp"

namespace finch {

// ---------------------------------------------------------------------------
// Model types

void TrainConfig::validate() const {
  if (!(lr > 0.0) || !std::isfinite(lr)) throw InvalidInput("lr must be positive");
  if (!(weight_decay >= 0.0)) throw InvalidInput("weight_decay must be nonnegative");
  if (epochs == 0) throw InvalidInput("epochs must be positive");
  if (batch_size == 0) throw InvalidInput("batch_size must be positive");
  if (!(warmup_fraction > 0.0 && warmup_fraction < 1.0)) {
    throw InvalidInput("warmup_fraction must lie in (0, 1)");
  }
  if (!(val_fraction >= 0.0 && val_fraction < 1.0)) {
    throw InvalidInput("val_fraction must lie in [0, 1)");
  }
  if (!(lambda_var >= 0.0)) throw InvalidInput("lambda_var must be nonnegative");
  if (gate_hidden == 0) throw InvalidInput("gate_hidden must be positive");
  if (!(gate_dropout >= 0.0 && gate_dropout < 1.0)) {
    throw InvalidInput("gate_dropout must lie in [0, 1)");
  }
  if (!(omega_max_init > kOmegaMaxFloor && omega_max_init < kOmegaMaxCeiling)) {
    throw InvalidInput("omega_max_init must lie in (1e-6, 10)");
  }
  if (!(omega_init >= 0.0 && omega_init < kOmegaMaxCeiling)) {
    throw InvalidInput("omega_init must lie in [0, 10); 0 selects it automatically");
  }
}

AudioHead AudioHead::zeros(std::size_t n_classes, std::size_t dim) {
  AudioHead h;
  h.n_classes = n_classes;
  h.dim = dim;
  h.weights.assign(n_classes * dim, 0.0);
  h.bias.assign(n_classes, 0.0);
  return h;
}

std::vector<double> AudioHead::logits(std::span<const double> embedding) const {
  if (embedding.size() != dim) {
    throw DimensionError("audio head expects embeddings of size " + std::to_string(dim));
  }
  std::vector<double> z(bias);
  for (std::size_t c = 0; c < n_classes; ++c) {
    const double* row = &weights[c * dim];
    double acc = 0.0;
    for (std::size_t d = 0; d < dim; ++d) {
      acc += row[d] * embedding[d];
    }
    z[c] += acc;
  }
  return z;
}

std::vector<double> AudioHead::log_probs(std::span<const double> embedding) const {
  std::vector<double> z = logits(embedding);
  const double lse = log_sum_exp(z);
  for (double& v : z) {
    v -= lse;
  }
  return z;
}

void AudioHead::validate() const {
  if (n_classes < 2 || dim == 0 || weights.size() != n_classes * dim ||
      bias.size() != n_classes) {
    throw DimensionError("audio head shape is inconsistent");
  }
  for (double v : weights) {
    if (!std::isfinite(v)) throw NumericError("audio head has non-finite weights");
  }
  for (double v : bias) {
    if (!std::isfinite(v)) throw NumericError("audio head has non-finite bias");
  }
}

double StageCheckpoint::temperature() const { return temperature_from_raw(temp_raw); }
double StageCheckpoint::epsilon() const { return epsilon_from_raw(eps_raw); }

void StageCheckpoint::validate() const {
  head.validate();
  if (!std::isfinite(temp_raw) || !std::isfinite(eps_raw) || !std::isfinite(omega_raw)) {
    throw NumericError("checkpoint scalars must be finite");
  }
  switch (stage) {
    case Stage::audio_only:
    case Stage::fixed_weight:
      if (gate) {
        throw InvalidInput("only stage-3 checkpoints carry a gating network");
      }
      if (stage == Stage::audio_only && omega_raw != 0.0) {
        throw InvalidInput("stage-1 checkpoint must not carry a fusion weight");
      }
      break;
    case Stage::adaptive:
      if (!gate) {
        throw InvalidInput("stage-3 checkpoint is missing its gating network");
      }
      gate->validate();
      if (omega_raw != 0.0) {
        throw InvalidInput("stage-3 checkpoint must not carry a scalar fusion weight");
      }
      if (gate->temp_raw != temp_raw || gate->eps_raw != eps_raw) {
        throw InvalidInput("stage-3 gate scalars disagree with the checkpoint");
      }
      break;
    default:
      throw InvalidInput("unknown stage tag");
  }
}

// ---------------------------------------------------------------------------
// Losses

double cross_entropy(const CategoricalDistribution& p, std::size_t label) {
  if (label >= p.size()) {
    throw InvalidInput("cross_entropy: label out of range");
  }
  return -std::log(std::max(p[label], kCrossEntropyFloor));
}

VariancePenalty variance_penalty(std::span<const double> omegas, double lambda_var) {
  if (omegas.empty()) {
    throw InvalidInput("variance_penalty: empty batch");
  }
  VariancePenalty out;
  out.grads.assign(omegas.size(), 0.0);
  const double n = static_cast<double>(omegas.size());
  const double mean = std::accumulate(omegas.begin(), omegas.end(), 0.0) / n;
  double var = 0.0;
  for (double w : omegas) {
    var += (w - mean) * (w - mean);
  }
  var /= n;
  out.loss = -lambda_var * var;
  for (std::size_t i = 0; i < omegas.size(); ++i) {
    out.grads[i] = -lambda_var * 2.0 * (omegas[i] - mean) / n;
  }
  return out;
}

// ---------------------------------------------------------------------------
// Split

DataSplit split_train_val(const Dataset& dataset, double val_fraction, std::uint64_t seed) {
  DataSplit split;
  const std::size_t n = dataset.size();
  std::mt19937_64 rng(derive_seed(seed, 0x5b1175));

  if (val_fraction <= 0.0) {
    split.train.resize(n);
    std::iota(split.train.begin(), split.train.end(), std::size_t{0});
    return split;
  }

  std::vector<std::vector<std::size_t>> by_class(dataset.n_classes);
  for (std::size_t i = 0; i < n; ++i) {
    by_class[dataset.records[i].label].push_back(i);
  }
  bool stratifiable = true;
  for (const auto& members : by_class) {
    if (members.empty()) {
      continue;
    }
    const auto n_val = static_cast<std::size_t>(
        std::llround(val_fraction * static_cast<double>(members.size())));
    if (n_val == 0 || n_val >= members.size()) {
      stratifiable = false;
    }
  }

  if (stratifiable) {
    for (auto& members : by_class) {
      std::shuffle(members.begin(), members.end(), rng);
      const auto n_val = static_cast<std::size_t>(
          std::llround(val_fraction * static_cast<double>(members.size())));
      split.val.insert(split.val.end(), members.begin(), members.begin() + n_val);
      split.train.insert(split.train.end(), members.begin() + n_val, members.end());
    }
  } else {
    split.stratified = false;
    std::vector<std::size_t> all(n);
    std::iota(all.begin(), all.end(), std::size_t{0});
    std::shuffle(all.begin(), all.end(), rng);
    const auto n_val = std::min<std::size_t>(
        n - 1, static_cast<std::size_t>(std::llround(val_fraction * static_cast<double>(n))));
    split.val.assign(all.begin(), all.begin() + n_val);
    split.train.assign(all.begin() + n_val, all.end());
  }
  std::sort(split.train.begin(), split.train.end());
  std::sort(split.val.begin(), split.val.end());
  return split;
}

// ---------------------------------------------------------------------------
// Inference

Prediction predict(const StageCheckpoint& ckpt, const SampleRecord& record,
                   const CategoricalDistribution& prior, PredictMode mode) {
  const std::vector<double> lp = ckpt.head.log_probs(record.embedding);
  CategoricalDistribution audio = softmax(lp);
  if (prior.size() != audio.size()) {
    throw DimensionError("predict: prior class count differs from the head");
  }
  if (mode == PredictMode::audio_only || ckpt.stage == Stage::audio_only) {
    CategoricalDistribution fused = audio;
    return {std::move(audio), std::move(fused), 0.0};
  }

  double omega = 0.0;
  if (mode == PredictMode::full) {
    if (ckpt.stage == Stage::fixed_weight) {
      omega = ckpt.omega();
    } else {
      omega = gate_forward(*ckpt.gate, build_gating_features(audio, prior, record.context)).omega;
    }
  }
  CategoricalDistribution fused =
      fuse({lp, prior.probs(), omega, ckpt.temperature(), ckpt.epsilon()});
  return {std::move(audio), std::move(fused), omega};
}

Prediction predict_fixed_omega(const StageCheckpoint& ckpt, const SampleRecord& record,
                               const CategoricalDistribution& prior, double omega) {
  const std::vector<double> lp = ckpt.head.log_probs(record.embedding);
  CategoricalDistribution audio = softmax(lp);
  CategoricalDistribution fused = fuse({lp, prior.probs(), omega, 1.0, ckpt.epsilon()});
  return {std::move(audio), std::move(fused), omega};
}

// ---------------------------------------------------------------------------
// Batch losses

double head_batch_loss(const AudioHead& head, std::span<const SampleRecord> records,
                       std::span<const std::size_t> batch, HeadGradients* grads) {
  if (batch.empty()) {
    throw InvalidInput("head_batch_loss: empty batch");
  }
  if (grads) {
    grads->weights.assign(head.weights.size(), 0.0);
    grads->bias.assign(head.bias.size(), 0.0);
  }
  const double inv_b = 1.0 / static_cast<double>(batch.size());
  double loss = 0.0;
  for (std::size_t idx : batch) {
    const SampleRecord& r = records[idx];
    const std::vector<double> lp = head.log_probs(r.embedding);
    loss -= lp[r.label];
    if (!grads) {
      continue;
    }
    for (std::size_t c = 0; c < head.n_classes; ++c) {
      const double residual = (std::exp(lp[c]) - (c == r.label ? 1.0 : 0.0)) * inv_b;
      grads->bias[c] += residual;
      double* row = &grads->weights[c * head.dim];
      for (std::size_t d = 0; d < head.dim; ++d) {
        row[d] += residual * r.embedding[d];
      }
    }
  }
  return loss * inv_b;
}

FusionSample make_fusion_sample(const AudioHead& head, const SampleRecord& record,
                                const CategoricalDistribution& prior) {
  FusionSample s;
  s.audio_log_probs = head.log_probs(record.embedding);
  s.prior.assign(prior.probs().begin(), prior.probs().end());
  s.features = build_gating_features(softmax(s.audio_log_probs), prior, record.context);
  s.label = record.label;
  return s;
}

double fixed_weight_batch_loss(const FixedWeightParams& params,
                               std::span<const FusionSample> samples,
                               std::span<const std::size_t> batch, double lambda_var,
                               FixedWeightGradients* grads) {
  if (batch.empty()) {
    throw InvalidInput("fixed_weight_batch_loss: empty batch");
  }
  const double omega = softplus(params.omega_raw);
  const double temperature = temperature_from_raw(params.temp_raw);
  const double eps = epsilon_from_raw(params.eps_raw);
  const double inv_b = 1.0 / static_cast<double>(batch.size());

  double ce = 0.0;
  double d_omega = 0.0;
  double d_temp = 0.0;
  double d_eps = 0.0;
  for (std::size_t idx : batch) {
    const FusionSample& s = samples[idx];
    const FusionLoss fl =
        fuse_gradients({s.audio_log_probs, s.prior, omega, temperature, eps}, s.label);
    ce += fl.loss;
    d_omega += fl.grads.omega;
    d_temp += fl.grads.temperature;
    d_eps += fl.grads.epsilon;
  }
  const std::vector<double> omegas(batch.size(), omega);
  const VariancePenalty vp = variance_penalty(omegas, lambda_var);

  if (grads) {
    const double var_domega = std::accumulate(vp.grads.begin(), vp.grads.end(), 0.0);
    const double se = sigmoid(params.eps_raw);
    grads->omega_raw = (d_omega * inv_b + var_domega) * sigmoid(params.omega_raw);
    grads->temp_raw = d_temp * inv_b * temperature;
    grads->eps_raw = d_eps * inv_b * (kEpsilonMax - kEpsilonMin) * se * (1.0 - se);
  }
  return ce * inv_b + vp.loss;
}

AdaptiveBatchResult adaptive_batch_loss(const GateParameters& gate,
                                        std::span<const FusionSample> samples,
                                        std::span<const std::size_t> batch, double lambda_var,
                                        GateMode mode, std::uint64_t mask_seed,
                                        AdaptiveGradients* grads) {
  if (batch.empty()) {
    throw InvalidInput("adaptive_batch_loss: empty batch");
  }
  const double temperature = gate.temperature();
  const double eps = gate.epsilon();
  const double inv_b = 1.0 / static_cast<double>(batch.size());
  std::mt19937_64 rng(mask_seed);

  std::vector<GateForward> forwards;
  forwards.reserve(batch.size());
  AdaptiveBatchResult out;
  out.omegas.reserve(batch.size());
  for (std::size_t idx : batch) {
    forwards.push_back(gate_forward(gate, samples[idx].features, mode, rng));
    out.omegas.push_back(forwards.back().omega);
  }
  const VariancePenalty vp = variance_penalty(out.omegas, lambda_var);

  double ce = 0.0;
  double d_temp = 0.0;
  double d_eps_fusion = 0.0;
  if (grads) {
    grads->gate = GateGradients::zeros(gate.hidden);
  }
  for (std::size_t k = 0; k < batch.size(); ++k) {
    const FusionSample& s = samples[batch[k]];
    const FusionLoss fl =
        fuse_gradients({s.audio_log_probs, s.prior, out.omegas[k], temperature, eps}, s.label);
    ce += fl.loss;
    if (!grads) {
      continue;
    }
    d_temp += fl.grads.temperature;
    d_eps_fusion += fl.grads.epsilon;
    const double d_omega = fl.grads.omega * inv_b + vp.grads[k];
    grads->gate += gate_backward(gate, forwards[k].cache, d_omega);
  }
  if (grads) {
    const double se = sigmoid(gate.eps_raw);
    grads->temp_raw = d_temp * inv_b * temperature;
    grads->gate.eps_raw += d_eps_fusion * inv_b * (kEpsilonMax - kEpsilonMin) * se * (1.0 - se);
  }
  out.loss = ce * inv_b + vp.loss;
  return out;
}

// ---------------------------------------------------------------------------
// Training loops

namespace {

constexpr std::uint64_t kShuffleStream = 0x5e11;
constexpr std::uint64_t kDropoutStream = 0xd40f;
constexpr std::uint64_t kGateInitStream = 0x9a7e;

std::vector<std::vector<std::size_t>> make_batches(std::vector<std::size_t> order,
                                                   std::size_t batch_size) {
  std::vector<std::vector<std::size_t>> batches;
  for (std::size_t start = 0; start < order.size(); start += batch_size) {
    const std::size_t end = std::min(order.size(), start + batch_size);
    batches.emplace_back(order.begin() + static_cast<std::ptrdiff_t>(start),
                         order.begin() + static_cast<std::ptrdiff_t>(end));
  }
  return batches;
}

std::size_t steps_per_epoch(std::size_t n_train, std::size_t batch_size) {
  return (n_train + batch_size - 1) / batch_size;
}

// Shared epoch bookkeeping: shuffling, the lr schedule and best-checkpoint
// selection on validation accuracy (earliest epoch wins ties).
class EpochDriver {
 public:
  EpochDriver(const TrainConfig& config, DataSplit split, int stage)
      : config_(config),
        split_(std::move(split)),
        rng_(derive_seed(config.seed, kShuffleStream + static_cast<std::uint64_t>(stage))),
        total_steps_(config.epochs * steps_per_epoch(split_.train.size(), config.batch_size)) {}

  const std::vector<std::size_t>& train_indices() const { return split_.train; }

  const std::vector<std::size_t>& selection_indices() const {
    return split_.val.empty() ? split_.train : split_.val;
  }

  std::vector<std::vector<std::size_t>> next_epoch_batches() {
    std::vector<std::size_t> order = split_.train;
    std::shuffle(order.begin(), order.end(), rng_);
    return make_batches(std::move(order), config_.batch_size);
  }

  double next_lr() {
    ++step_;
    last_lr_ = cosine_warmup_lr(step_, total_steps_, config_.lr, config_.warmup_fraction);
    return last_lr_;
  }
  double last_lr() const { return last_lr_; }
  std::uint64_t step() const { return step_; }

  void record(TrainResult& result, const StageCheckpoint& candidate, EpochMetrics metrics,
              const EpochCallback& on_epoch) {
    StageCheckpoint snapshot = candidate;
    snapshot.best_val_accuracy = metrics.val_accuracy;
    snapshot.best_epoch = metrics.epoch;
    if (on_epoch) {
      on_epoch(snapshot, metrics);
    }
    if (result.history.empty() || metrics.val_accuracy > result.best.best_val_accuracy) {
      result.best = snapshot;
    }
    result.history.push_back(metrics);
  }

 private:
  const TrainConfig& config_;
  DataSplit split_;
  std::mt19937_64 rng_;
  std::uint64_t total_steps_ = 0;
  std::uint64_t step_ = 0;
  double last_lr_ = 0.0;
};

// Coarse search for the stage-2 starting weight: the grid point with the
// lowest training loss at the upstream temperature and epsilon.
double warm_start_omega(const std::vector<FusionSample>& samples,
                        const std::vector<std::size_t>& train, double temp_raw, double eps_raw) {
  double best = kWarmStartGrid.front();
  double best_loss = std::numeric_limits<double>::infinity();
  for (double omega : kWarmStartGrid) {
    const FixedWeightParams p{inverse_softplus(omega), temp_raw, eps_raw};
    const double loss = fixed_weight_batch_loss(p, samples, train, 0.0, nullptr);
    if (loss < best_loss) {
      best_loss = loss;
      best = omega;
    }
  }
  return best;
}

void check_prefix(const Dataset& dataset, const TrainConfig& config, TrainResult& result,
                  const DataSplit& split) {
  dataset.validate();
  config.validate();
  if (split.train.empty()) {
    throw InvalidInput("training split is empty");
  }
  if (!split.stratified) {
    result.warnings.push_back(
        "some class is too small for a stratified validation split; used a random split");
  }
}

struct SelectionStats {
  double accuracy = 0.0;
  double mean_omega = 0.0;
  double var_omega = 0.0;
};

SelectionStats selection_stats(const std::vector<std::size_t>& indices,
                               const std::function<Prediction(std::size_t)>& predict_one,
                               std::span<const SampleRecord> records) {
  SelectionStats s;
  if (indices.empty()) {
    return s;
  }
  std::size_t correct = 0;
  std::vector<double> omegas;
  omegas.reserve(indices.size());
  for (std::size_t i : indices) {
    const Prediction p = predict_one(i);
    correct += p.fused.argmax() == records[i].label ? 1 : 0;
    omegas.push_back(p.omega);
  }
  const double n = static_cast<double>(indices.size());
  s.accuracy = static_cast<double>(correct) / n;
  s.mean_omega = std::accumulate(omegas.begin(), omegas.end(), 0.0) / n;
  for (double w : omegas) {
    s.var_omega += (w - s.mean_omega) * (w - s.mean_omega);
  }
  s.var_omega /= n;
  return s;
}

std::vector<FusionSample> build_fusion_samples(const Dataset& dataset, const PriorTable& priors,
                                               const AudioHead& head) {
  if (priors.n_classes() != dataset.n_classes) {
    throw DimensionError("prior table class count differs from the dataset");
  }
  std::vector<FusionSample> samples;
  samples.reserve(dataset.size());
  for (const SampleRecord& r : dataset.records) {
    samples.push_back(make_fusion_sample(head, r, lookup_prior(priors, r.sample_id)));
  }
  return samples;
}

void check_upstream(const StageCheckpoint& upstream, Stage expected, const Dataset& dataset) {
  upstream.validate();
  if (upstream.stage != expected) {
    throw InvalidInput("expected a stage-" + std::to_string(static_cast<int>(expected)) +
                       " checkpoint");
  }
  if (upstream.head.n_classes != dataset.n_classes || upstream.head.dim != dataset.dim) {
    throw DimensionError("checkpoint head does not match the dataset dimensions");
  }
}

}  // namespace

TrainResult train_stage1(const Dataset& dataset, const TrainConfig& config,
                         const EpochCallback& on_epoch) {
  TrainResult result;
  DataSplit split = split_train_val(dataset, config.val_fraction, config.seed);
  check_prefix(dataset, config, result, split);
  EpochDriver driver(config, std::move(split), 1);

  StageCheckpoint ckpt;
  ckpt.stage = Stage::audio_only;
  ckpt.head = AudioHead::zeros(dataset.n_classes, dataset.dim);
  ckpt.config = config;
  ckpt.seed = config.seed;

  const std::span<const SampleRecord> records(dataset.records);
  AdamState w_state;
  AdamState b_state;
  HeadGradients grads;
  const auto predict_one = [&](std::size_t i) {
    return predict(ckpt, records[i], CategoricalDistribution::uniform(dataset.n_classes));
  };

  for (std::size_t epoch = 1; epoch <= config.epochs; ++epoch) {
    double loss_sum = 0.0;
    std::size_t seen = 0;
    for (const auto& batch : driver.next_epoch_batches()) {
      const double loss = head_batch_loss(ckpt.head, records, batch, &grads);
      loss_sum += loss * static_cast<double>(batch.size());
      seen += batch.size();
      const double lr = driver.next_lr();
      adamw_step(w_state, ckpt.head.weights, grads.weights, lr, config.weight_decay);
      adamw_step(b_state, ckpt.head.bias, grads.bias, lr, 0.0);
    }
    const SelectionStats stats = selection_stats(driver.selection_indices(), predict_one, records);
    driver.record(result, ckpt,
                  {epoch, loss_sum / static_cast<double>(seen), stats.accuracy, driver.last_lr(),
                   0.0, 0.0},
                  on_epoch);
  }
  return result;
}

TrainResult train_stage2(const Dataset& dataset, const PriorTable& priors,
                         const StageCheckpoint& stage1, const TrainConfig& config,
                         const EpochCallback& on_epoch) {
  check_upstream(stage1, Stage::audio_only, dataset);
  TrainResult result;
  DataSplit split = split_train_val(dataset, config.val_fraction, config.seed);
  check_prefix(dataset, config, result, split);
  EpochDriver driver(config, std::move(split), 2);

  const std::vector<FusionSample> samples = build_fusion_samples(dataset, priors, stage1.head);

  StageCheckpoint ckpt;
  ckpt.stage = Stage::fixed_weight;
  ckpt.head = stage1.head;
  ckpt.temp_raw = stage1.temp_raw;
  ckpt.eps_raw = stage1.eps_raw;
  ckpt.omega_raw = inverse_softplus(
      config.omega_init > 0.0
          ? config.omega_init
          : warm_start_omega(samples, driver.train_indices(), ckpt.temp_raw, ckpt.eps_raw));
  ckpt.config = config;
  ckpt.seed = config.seed;

  const std::span<const SampleRecord> records(dataset.records);
  const auto predict_one = [&](std::size_t i) {
    const FusionSample& s = samples[i];
    const CategoricalDistribution fused =
        fuse({s.audio_log_probs, s.prior, ckpt.omega(), ckpt.temperature(), ckpt.epsilon()});
    return Prediction{fused, fused, ckpt.omega()};
  };

  const SelectionStats init = selection_stats(driver.selection_indices(), predict_one, records);
  driver.record(result, ckpt, {0, 0.0, init.accuracy, 0.0, init.mean_omega, init.var_omega},
                on_epoch);

  AdamState state;
  for (std::size_t epoch = 1; epoch <= config.epochs; ++epoch) {
    double loss_sum = 0.0;
    std::size_t seen = 0;
    for (const auto& batch : driver.next_epoch_batches()) {
      FixedWeightParams params{ckpt.omega_raw, ckpt.temp_raw, ckpt.eps_raw};
      FixedWeightGradients g;
      const double loss = fixed_weight_batch_loss(params, samples, batch, config.lambda_var, &g);
      loss_sum += loss * static_cast<double>(batch.size());
      seen += batch.size();
      std::array<double, 3> values{params.omega_raw, params.temp_raw, params.eps_raw};
      const std::array<double, 3> gvec{g.omega_raw, g.temp_raw, g.eps_raw};
      adamw_step(state, values, gvec, driver.next_lr(), 0.0);
      ckpt.omega_raw = values[0];
      ckpt.temp_raw = values[1];
      ckpt.eps_raw = values[2];
    }
    const SelectionStats stats = selection_stats(driver.selection_indices(), predict_one, records);
    driver.record(result, ckpt,
                  {epoch, loss_sum / static_cast<double>(seen), stats.accuracy, driver.last_lr(),
                   stats.mean_omega, stats.var_omega},
                  on_epoch);
  }
  return result;
}

TrainResult train_stage3(const Dataset& dataset, const PriorTable& priors,
                         const StageCheckpoint& stage2, const TrainConfig& config,
                         const EpochCallback& on_epoch) {
  check_upstream(stage2, Stage::fixed_weight, dataset);
  TrainResult result;
  DataSplit split = split_train_val(dataset, config.val_fraction, config.seed);
  check_prefix(dataset, config, result, split);
  EpochDriver driver(config, std::move(split), 3);

  const std::vector<FusionSample> samples = build_fusion_samples(dataset, priors, stage2.head);

  GateParameters gate = GateParameters::zeros(config.gate_hidden, config.gate_dropout);
  gate.temp_raw = stage2.temp_raw;
  gate.eps_raw = stage2.eps_raw;
  const double eps = gate.epsilon();
  const double target_omega = stage2.omega();
  // omega_max must leave room above the stage-2 weight so the gate starts
  // away from sigmoid saturation.
  const double omega_max =
      std::min(std::max(config.omega_max_init, 2.0 * target_omega), 0.999 * kOmegaMaxCeiling);
  gate.omega_max_raw = omega_max_to_raw(omega_max);
  double init_target = target_omega;
  const double floor_target = eps + 1e-3 * gate.omega_max();
  if (init_target < floor_target) {
    result.warnings.push_back("stage-2 weight " + std::to_string(target_omega) +
                              " is below the gate floor; initialized at " +
                              std::to_string(floor_target));
    init_target = floor_target;
  }
  gate = init_constant_gate(gate, init_target, derive_seed(config.seed, kGateInitStream));

  StageCheckpoint ckpt;
  ckpt.stage = Stage::adaptive;
  ckpt.head = stage2.head;
  ckpt.gate = gate;
  ckpt.temp_raw = gate.temp_raw;
  ckpt.eps_raw = gate.eps_raw;
  ckpt.config = config;
  ckpt.seed = config.seed;

  const std::span<const SampleRecord> records(dataset.records);
  const auto predict_one = [&](std::size_t i) {
    const FusionSample& s = samples[i];
    const double omega = gate_forward(*ckpt.gate, s.features).omega;
    const CategoricalDistribution fused = fuse(
        {s.audio_log_probs, s.prior, omega, ckpt.gate->temperature(), ckpt.gate->epsilon()});
    return Prediction{fused, fused, omega};
  };

  const SelectionStats init = selection_stats(driver.selection_indices(), predict_one, records);
  driver.record(result, ckpt, {0, 0.0, init.accuracy, 0.0, init.mean_omega, init.var_omega},
                on_epoch);

  AdamState w1_state, b1_state, w2_state, scalar_state;
  for (std::size_t epoch = 1; epoch <= config.epochs; ++epoch) {
    double loss_sum = 0.0;
    std::size_t seen = 0;
    for (const auto& batch : driver.next_epoch_batches()) {
      GateParameters& g = *ckpt.gate;
      AdaptiveGradients grads;
      const std::uint64_t mask_seed = derive_seed(config.seed, kDropoutStream + driver.step());
      const AdaptiveBatchResult r = adaptive_batch_loss(g, samples, batch, config.lambda_var,
                                                        GateMode::train, mask_seed, &grads);
      loss_sum += r.loss * static_cast<double>(batch.size());
      seen += batch.size();

      const double lr = driver.next_lr();
      adamw_step(w1_state, g.w1, grads.gate.w1, lr, config.weight_decay);
      adamw_step(b1_state, g.b1, grads.gate.b1, lr, config.weight_decay);
      adamw_step(w2_state, g.w2, grads.gate.w2, lr, config.weight_decay);
      std::array<double, 4> scalars{g.b2, g.omega_max_raw, g.temp_raw, g.eps_raw};
      const std::array<double, 4> scalar_grads{grads.gate.b2, grads.gate.omega_max_raw,
                                               grads.temp_raw, grads.gate.eps_raw};
      adamw_step(scalar_state, scalars, scalar_grads, lr, 0.0);
      g.b2 = scalars[0];
      g.omega_max_raw = scalars[1];
      g.temp_raw = scalars[2];
      g.eps_raw = scalars[3];
      ckpt.temp_raw = g.temp_raw;
      ckpt.eps_raw = g.eps_raw;
    }
    const SelectionStats stats = selection_stats(driver.selection_indices(), predict_one, records);
    driver.record(result, ckpt,
                  {epoch, loss_sum / static_cast<double>(seen), stats.accuracy, driver.last_lr(),
                   stats.mean_omega, stats.var_omega},
                  on_epoch);
  }
  return result;
}

}  // namespace finch
