#include "finch/context_mlp.hpp"

#include <algorithm>
#include <cmath>
#include <random>

#include "finch/error.hpp"
#include "finch/optim.hpp"
#include "finch/training.hpp"

namespace finch {

namespace {

DenseLayer make_layer(std::size_t in, std::size_t out, std::mt19937_64& rng) {
  DenseLayer layer;
  layer.in = in;
  layer.out = out;
  layer.weights.resize(in * out);
  layer.bias.assign(out, 0.0);
  const double bound = std::sqrt(6.0 / static_cast<double>(in));
  std::uniform_real_distribution<double> unif(-bound, bound);
  for (double& w : layer.weights) {
    w = unif(rng);
  }
  return layer;
}

DenseLayer zeros_like(const DenseLayer& l) {
  DenseLayer z;
  z.in = l.in;
  z.out = l.out;
  z.weights.assign(l.weights.size(), 0.0);
  z.bias.assign(l.bias.size(), 0.0);
  return z;
}

void dense_forward(const DenseLayer& l, std::span<const double> x, std::vector<double>& y) {
  y.assign(l.bias.begin(), l.bias.end());
  for (std::size_t o = 0; o < l.out; ++o) {
    const double* row = &l.weights[o * l.in];
    double acc = 0.0;
    for (std::size_t i = 0; i < l.in; ++i) {
      acc += row[i] * x[i];
    }
    y[o] += acc;
  }
}

void relu_inplace(std::vector<double>& v) {
  for (double& x : v) {
    x = std::max(x, 0.0);
  }
}

// Accumulates dW += dy x^T, db += dy and, when dx is given, dx = W^T dy.
void dense_backward(const DenseLayer& l, std::span<const double> x, std::span<const double> dy,
                    DenseLayer& grad, std::vector<double>* dx) {
  if (dx) {
    dx->assign(l.in, 0.0);
  }
  for (std::size_t o = 0; o < l.out; ++o) {
    if (dy[o] == 0.0) {
      continue;
    }
    grad.bias[o] += dy[o];
    double* grow = &grad.weights[o * l.in];
    const double* wrow = &l.weights[o * l.in];
    for (std::size_t i = 0; i < l.in; ++i) {
      grow[i] += dy[o] * x[i];
      if (dx) {
        (*dx)[i] += wrow[i] * dy[o];
      }
    }
  }
}

}  // namespace

ContextMlp::ContextMlp(std::size_t n_classes, std::uint64_t seed) {
  if (n_classes < 2) {
    throw InvalidInput("context MLP needs at least 2 classes");
  }
  std::mt19937_64 rng(seed);
  layers_[0] = make_layer(kMetadataFeatures, kHidden, rng);
  layers_[1] = make_layer(kHidden, kHidden, rng);
  layers_[2] = make_layer(kHidden, n_classes, rng);
}

ContextMlp::ContextMlp(std::array<DenseLayer, 3> layers) : layers_(std::move(layers)) {
  if (layers_[0].in != kMetadataFeatures || layers_[0].out != layers_[1].in ||
      layers_[1].out != layers_[2].in || layers_[2].out < 2) {
    throw DimensionError("context MLP layer shapes do not chain");
  }
  for (const DenseLayer& l : layers_) {
    if (l.weights.size() != l.in * l.out || l.bias.size() != l.out) {
      throw DimensionError("context MLP layer has inconsistent storage");
    }
  }
}

std::vector<double> ContextMlp::logits(const SpatioTemporalContext& ctx) const {
  const auto x = encode_metadata(ctx);
  std::vector<double> h1, h2, z;
  dense_forward(layers_[0], x, h1);
  relu_inplace(h1);
  dense_forward(layers_[1], h1, h2);
  relu_inplace(h2);
  dense_forward(layers_[2], h2, z);
  return z;
}

CategoricalDistribution ContextMlp::predict(const SpatioTemporalContext& ctx) const {
  return softmax(logits(ctx));
}

double ContextMlp::batch_loss(std::span<const SampleRecord> records,
                              std::span<const std::size_t> batch,
                              std::array<DenseLayer, 3>* grads) const {
  if (batch.empty()) {
    throw InvalidInput("context MLP: empty batch");
  }
  if (grads) {
    for (std::size_t k = 0; k < 3; ++k) {
      (*grads)[k] = zeros_like(layers_[k]);
    }
  }
  const double inv_b = 1.0 / static_cast<double>(batch.size());
  double loss = 0.0;
  std::vector<double> h1, h2, z, dz, dh2, dh1;
  for (std::size_t idx : batch) {
    const SampleRecord& r = records[idx];
    const auto x = encode_metadata(r.context);
    dense_forward(layers_[0], x, h1);
    relu_inplace(h1);
    dense_forward(layers_[1], h1, h2);
    relu_inplace(h2);
    dense_forward(layers_[2], h2, z);
    const double lse = log_sum_exp(z);
    loss += lse - z[r.label];
    if (!grads) {
      continue;
    }
    dz.resize(z.size());
    for (std::size_t c = 0; c < z.size(); ++c) {
      dz[c] = (std::exp(z[c] - lse) - (c == r.label ? 1.0 : 0.0)) * inv_b;
    }
    dense_backward(layers_[2], h2, dz, (*grads)[2], &dh2);
    for (std::size_t i = 0; i < dh2.size(); ++i) {
      if (h2[i] <= 0.0) dh2[i] = 0.0;
    }
    dense_backward(layers_[1], h1, dh2, (*grads)[1], &dh1);
    for (std::size_t i = 0; i < dh1.size(); ++i) {
      if (h1[i] <= 0.0) dh1[i] = 0.0;
    }
    dense_backward(layers_[0], x, dh1, (*grads)[0], nullptr);
  }
  return loss * inv_b;
}

ContextMlpResult train_context_mlp(const Dataset& dataset, const TrainConfig& config) {
  dataset.validate();
  config.validate();
  const DataSplit split = split_train_val(dataset, config.val_fraction, config.seed);
  const std::vector<std::size_t>& selection = split.val.empty() ? split.train : split.val;

  ContextMlp model(dataset.n_classes, derive_seed(config.seed, 0xc0de));
  const std::span<const SampleRecord> records(dataset.records);
  std::mt19937_64 rng(derive_seed(config.seed, 0xc0de + 1));
  const std::size_t per_epoch = (split.train.size() + config.batch_size - 1) / config.batch_size;
  const std::uint64_t total = config.epochs * per_epoch;

  std::array<AdamState, 3> w_states, b_states;
  std::array<DenseLayer, 3> grads;
  ContextMlpResult best{model, -1.0, 0};
  std::uint64_t step = 0;
  for (std::size_t epoch = 1; epoch <= config.epochs; ++epoch) {
    std::vector<std::size_t> order = split.train;
    std::shuffle(order.begin(), order.end(), rng);
    for (std::size_t start = 0; start < order.size(); start += config.batch_size) {
      const std::size_t end = std::min(order.size(), start + config.batch_size);
      const std::span<const std::size_t> batch(order.data() + start, end - start);
      model.batch_loss(records, batch, &grads);
      const double lr = cosine_warmup_lr(++step, total, config.lr, config.warmup_fraction);
      auto& layers = model.mutable_layers();
      for (std::size_t k = 0; k < 3; ++k) {
        adamw_step(w_states[k], layers[k].weights, grads[k].weights, lr, config.weight_decay);
        adamw_step(b_states[k], layers[k].bias, grads[k].bias, lr, 0.0);
      }
    }
    std::size_t correct = 0;
    for (std::size_t i : selection) {
      correct += model.predict(records[i].context).argmax() == records[i].label ? 1 : 0;
    }
    const double acc = static_cast<double>(correct) / static_cast<double>(selection.size());
    if (acc > best.best_val_accuracy) {
      best = {model, acc, epoch};
    }
  }
  return best;
}

PriorTable prior_table_from_model(const ContextMlp& model, const Dataset& dataset) {
  if (model.n_classes() != dataset.n_classes) {
    throw DimensionError("context MLP class count differs from the dataset");
  }
  std::vector<std::uint64_t> ids;
  std::vector<CategoricalDistribution> rows;
  ids.reserve(dataset.size());
  rows.reserve(dataset.size());
  for (const SampleRecord& r : dataset.records) {
    ids.push_back(r.sample_id);
    rows.push_back(model.predict(r.context));
  }
  return PriorTable::from_distributions(std::move(ids), rows);
}

}  // namespace finch
