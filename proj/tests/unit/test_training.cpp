#include <doctest.h>

#include <cmath>
#include <map>
#include <numeric>
#include <random>

#include "finch/context_mlp.hpp"
#include "finch/error.hpp"
#include "finch/gradcheck.hpp"
#include "finch/optim.hpp"
#include "finch/synthetic.hpp"
#include "finch/training.hpp"
#include "support/oracles.hpp"

using namespace finch;

namespace {

// Two Gaussian blobs far apart in D=4: linearly separable.
Dataset separable_dataset(std::size_t n, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> noise(0.0, 0.3);
  Dataset d{2, 4, {}};
  for (std::size_t i = 0; i < n; ++i) {
    SampleRecord r;
    r.sample_id = i;
    r.label = static_cast<std::uint32_t>(i % 2);
    const double centre = r.label == 0 ? -2.0 : 2.0;
    for (int k = 0; k < 4; ++k) r.embedding.push_back(centre + noise(rng));
    d.records.push_back(r);
  }
  return d;
}

struct SynthData {
  Dataset data;
  PriorTable priors;
};

SynthData synth(SyntheticConfig c) {
  auto samples = generate(c);
  corrupt_priors(samples, c);
  return {to_dataset(samples, c.n_classes, c.embed_dim), to_prior_table(samples)};
}

SyntheticConfig small_config(std::uint64_t seed) {
  SyntheticConfig c = synthetic_preset("ci");
  c.n_classes = 5;
  c.embed_dim = 6;
  c.n_cells = 10;
  c.n_samples = 1500;
  c.class_sep = 2.0;
  c.seed = seed;
  return c;
}

TrainConfig fast_config(std::uint64_t seed) {
  TrainConfig t;
  t.epochs = 6;
  t.seed = seed;
  t.gate_hidden = 16;
  return t;
}

}  // namespace

TEST_CASE("cross-entropy examples") {
  CHECK(cross_entropy(CategoricalDistribution::one_hot(3, 1), 1) == 0.0);
  CHECK(cross_entropy(CategoricalDistribution::uniform(5), 2) == doctest::Approx(std::log(5.0)));
  CHECK(cross_entropy(CategoricalDistribution({0.25, 0.75}), 0) == doctest::Approx(1.386294).epsilon(1e-6));
  CHECK(cross_entropy(CategoricalDistribution::one_hot(3, 0), 1) == doctest::Approx(-std::log(1e-12)));
  CHECK_THROWS(cross_entropy(CategoricalDistribution::uniform(3), 3));
}

TEST_CASE("variance penalty") {
  auto same = variance_penalty(std::vector<double>{0.3, 0.3, 0.3}, 1.0);
  CHECK(same.loss == 0.0);
  for (double g : same.grads) CHECK(g == 0.0);

  auto two = variance_penalty(std::vector<double>{0.2, 0.4}, 1.0);
  CHECK(two.loss == doctest::Approx(-0.01).epsilon(1e-12));

  auto one = variance_penalty(std::vector<double>{0.9}, 5.0);
  CHECK(one.loss == 0.0);
  CHECK(one.grads[0] == 0.0);

  std::mt19937_64 rng(1);
  std::uniform_real_distribution<double> u(0.0, 3.0);
  for (int t = 0; t < 50; ++t) {
    std::vector<double> w(2 + t % 20);
    for (double& v : w) v = u(rng);
    const double lambda = 0.01 * (t + 1);
    const auto vp = variance_penalty(w, lambda);
    for (std::size_t i = 0; i < w.size(); ++i) {
      const double num = finch::testing::central_difference(
          w, i, 1e-5, [&](const std::vector<double>& x) { return variance_penalty(x, lambda).loss; });
      CHECK(finch::testing::grad_close(vp.grads[i], num, 1e-6, 1e-12));
    }
  }
}

TEST_CASE("AdamW update") {
  AdamState s;
  std::vector<double> p{1.0, -2.0};
  adamw_step(s, p, std::vector<double>{0.0, 0.0}, 0.1, 0.0);
  CHECK(p[0] == 1.0);
  CHECK(p[1] == -2.0);

  AdamState s1;
  std::vector<double> w{1.0};
  adamw_step(s1, w, std::vector<double>{0.5}, 0.1, 0.01);
  CHECK(w[0] == doctest::Approx(0.899).epsilon(1e-7));

  auto run = [] {
    AdamState st;
    std::vector<double> q{0.3, 0.1, -0.2};
    std::mt19937_64 rng(4);
    std::normal_distribution<double> n;
    for (int i = 0; i < 100; ++i) {
      std::vector<double> g{n(rng), n(rng), n(rng)};
      adamw_step(st, q, g, 1e-2, 1e-2);
    }
    return q;
  };
  CHECK(run() == run());
  CHECK_THROWS(adamw_step(s, p, std::vector<double>{1.0}, 0.1, 0.0));
}

TEST_CASE("cosine schedule with warmup") {
  const double base = 1e-3;
  // 10% of 100 steps -> 10 warmup steps.
  CHECK(cosine_warmup_lr(5, 100, base, 0.1) == doctest::Approx(0.5 * base));
  CHECK(cosine_warmup_lr(10, 100, base, 0.1) == doctest::Approx(base));
  CHECK(std::abs(cosine_warmup_lr(100, 100, base, 0.1)) < 1e-18);
  CHECK(cosine_warmup_lr(55, 100, base, 0.1) == doctest::Approx(0.5 * base));
  CHECK(cosine_warmup_lr(0, 100, base, 0.1) == 0.0);
  CHECK_THROWS(cosine_warmup_lr(101, 100, base, 0.1));
  double prev = base;
  for (std::uint64_t s = 10; s <= 100; ++s) {
    const double lr = cosine_warmup_lr(s, 100, base, 0.1);
    CHECK(lr <= prev + 1e-18);
    prev = lr;
  }
}

TEST_CASE("config validation") {
  TrainConfig c;
  CHECK_NOTHROW(c.validate());
  c.warmup_fraction = 0.0;
  CHECK_THROWS_AS(c.validate(), InvalidInput);
  c = TrainConfig{};
  c.val_fraction = 1.0;
  CHECK_THROWS_AS(c.validate(), InvalidInput);
  c = TrainConfig{};
  c.lr = 0.0;
  CHECK_THROWS_AS(c.validate(), InvalidInput);
}

TEST_CASE("stratified split") {
  const auto d = synth(small_config(3)).data;
  const auto split = split_train_val(d, 0.1, 7);
  CHECK(split.stratified);
  CHECK(std::is_sorted(split.train.begin(), split.train.end()));
  CHECK(std::is_sorted(split.val.begin(), split.val.end()));
  CHECK(split.train.size() + split.val.size() == d.size());
  std::map<std::uint32_t, std::size_t> total, in_val;
  for (const auto& r : d.records) ++total[r.label];
  for (std::size_t i : split.val) ++in_val[d.records[i].label];
  for (const auto& [label, n] : total) {
    CHECK(in_val[label] == static_cast<std::size_t>(std::llround(0.1 * static_cast<double>(n))));
  }
  CHECK(split_train_val(d, 0.1, 7).val == split.val);
  CHECK_FALSE(split_train_val(d, 0.1, 8).val == split.val);
}

TEST_CASE("tiny classes fall back to a random split with a warning") {
  Dataset d = separable_dataset(40, 1);
  d.n_classes = 3;
  d.records[0].label = 2;  // class 2 has a single sample
  CHECK_FALSE(split_train_val(d, 0.2, 1).stratified);
  TrainConfig c = fast_config(1);
  c.epochs = 1;
  const auto r = train_stage1(d, c);
  CHECK_FALSE(r.warnings.empty());
}

TEST_CASE("stage 1 separates linearly separable data") {
  const Dataset d = separable_dataset(400, 2);
  TrainConfig c;
  c.seed = 5;
  const auto r = train_stage1(d, c);
  CHECK(r.best.best_val_accuracy == 1.0);
  CHECK(r.best.stage == Stage::audio_only);
  CHECK(r.history.size() == c.epochs);
}

TEST_CASE("head, stage-2 and stage-3 gradients match finite differences") {
  const auto s = synth(small_config(4));
  std::mt19937_64 rng(9);
  std::normal_distribution<double> n(0.0, 0.4);
  AudioHead head = AudioHead::zeros(5, 6);
  for (double& w : head.weights) w = n(rng);
  for (double& b : head.bias) b = n(rng);
  std::vector<FusionSample> samples;
  for (std::size_t i = 0; i < 16; ++i) {
    const auto& r = s.data.records[i];
    samples.push_back(make_fusion_sample(head, r, lookup_prior(s.priors, r.sample_id)));
  }
  std::vector<std::size_t> batch(16);
  std::iota(batch.begin(), batch.end(), std::size_t{0});

  CHECK(gradcheck_head(head, s.data.records, batch).pass);
  for (double lambda : {0.0, 1e-3, 0.7}) {
    CHECK(gradcheck_fixed_weight({0.3, -0.2, 0.5}, samples, batch, lambda).pass);
    const GateParameters g = random_gate(8, 0.1, 0.6, 11);
    CHECK(gradcheck_adaptive(g, samples, batch, lambda, GateMode::train, 3).pass);
    CHECK(gradcheck_adaptive(g, samples, batch, lambda, GateMode::eval, 3).pass);
  }
}

TEST_CASE("adaptive loss adds the variance reward") {
  const auto s = synth(small_config(5));
  const AudioHead head = AudioHead::zeros(5, 6);
  std::vector<FusionSample> samples;
  for (std::size_t i = 0; i < 8; ++i) {
    const auto& r = s.data.records[i];
    samples.push_back(make_fusion_sample(head, r, lookup_prior(s.priors, r.sample_id)));
  }
  std::vector<std::size_t> batch(8);
  std::iota(batch.begin(), batch.end(), std::size_t{0});
  const GateParameters g = random_gate(8, 0.1, 0.8, 2);
  const auto base = adaptive_batch_loss(g, samples, batch, 0.0, GateMode::eval, 1, nullptr);
  const auto reg = adaptive_batch_loss(g, samples, batch, 0.5, GateMode::eval, 1, nullptr);
  const double mean = std::accumulate(base.omegas.begin(), base.omegas.end(), 0.0) / 8.0;
  double var = 0.0;
  for (double w : base.omegas) var += (w - mean) * (w - mean) / 8.0;
  CHECK(reg.loss == doctest::Approx(base.loss - 0.5 * var).epsilon(1e-12));
}

TEST_CASE("three-stage pipeline: frozen head, recoverability, determinism") {
  SyntheticConfig sc = synthetic_preset("ci");
  sc.seed = 6;
  const auto s = synth(sc);
  TrainConfig c;
  c.seed = 12;
  const auto r1 = train_stage1(s.data, c);
  const auto r2 = train_stage2(s.data, s.priors, r1.best, c);
  const auto r3 = train_stage3(s.data, s.priors, r2.best, c);

  CHECK(r2.best.head == r1.best.head);
  CHECK(r3.best.head == r1.best.head);
  CHECK(r2.best.stage == Stage::fixed_weight);
  CHECK(r3.best.stage == Stage::adaptive);
  CHECK(r3.best.gate.has_value());
  CHECK_NOTHROW(r3.best.validate());
  CHECK(r2.history.front().epoch == 0);
  CHECK(r2.history.size() == c.epochs + 1);

  // Informative priors: each later stage is at least as good as the one before.
  CHECK(r2.best.best_val_accuracy >= r1.best.best_val_accuracy - 0.005);
  CHECK(r3.best.best_val_accuracy >= r2.best.best_val_accuracy - 0.005);

  // Gate forced to zero at T = 1 gives back the stage-1 predictions.
  StageCheckpoint zeroed = r3.best;
  zeroed.temp_raw = 0.0;
  zeroed.gate->temp_raw = 0.0;
  for (std::size_t i = 0; i < 50; ++i) {
    const auto& rec = s.data.records[i];
    const auto prior = lookup_prior(s.priors, rec.sample_id);
    const auto a = predict(r1.best, rec, prior);
    const auto z = predict(zeroed, rec, prior, PredictMode::gate_zero);
    CHECK(z.omega == 0.0);
    for (std::size_t k = 0; k < a.fused.size(); ++k) CHECK(std::abs(a.fused[k] - z.fused[k]) < 1e-12);
    const auto fixed0 = predict_fixed_omega(r3.best, rec, prior, 0.0);
    CHECK(fixed0.fused == a.fused);
  }

  const auto again1 = train_stage1(s.data, c);
  const auto again2 = train_stage2(s.data, s.priors, again1.best, c);
  const auto again3 = train_stage3(s.data, s.priors, again2.best, c);
  CHECK(again1.best == r1.best);
  CHECK(again2.best == r2.best);
  CHECK(again3.best == r3.best);
  CHECK(again3.history == r3.history);
}

TEST_CASE("uniform priors make stage 2 a no-op on accuracy") {
  auto s = synth(small_config(7));
  std::vector<CategoricalDistribution> rows(s.data.size(), CategoricalDistribution::uniform(5));
  std::vector<std::uint64_t> ids;
  for (const auto& r : s.data.records) ids.push_back(r.sample_id);
  const PriorTable uniform = PriorTable::from_distributions(ids, rows);
  const TrainConfig c = fast_config(3);
  const auto r1 = train_stage1(s.data, c);
  const auto r2 = train_stage2(s.data, uniform, r1.best, c);
  CHECK(std::abs(r2.best.best_val_accuracy - r1.best.best_val_accuracy) <= 0.005);
}

TEST_CASE("stages reject the wrong upstream checkpoint") {
  const auto s = synth(small_config(8));
  TrainConfig c = fast_config(1);
  c.epochs = 1;
  const auto r1 = train_stage1(s.data, c);
  CHECK_THROWS(train_stage3(s.data, s.priors, r1.best, c));
  const auto r2 = train_stage2(s.data, s.priors, r1.best, c);
  CHECK_THROWS(train_stage2(s.data, s.priors, r2.best, c));
}

TEST_CASE("checkpoint content must match its stage") {
  StageCheckpoint ck;
  ck.head = AudioHead::zeros(3, 2);
  CHECK_NOTHROW(ck.validate());
  ck.gate = GateParameters::zeros(4);
  CHECK_THROWS(ck.validate());
  ck.stage = Stage::adaptive;
  CHECK_NOTHROW(ck.validate());
  ck.stage = Stage::fixed_weight;
  CHECK_THROWS(ck.validate());
}

TEST_CASE("context MLP learns a latitude threshold") {
  std::mt19937_64 rng(31);
  std::uniform_real_distribution<double> lat(-80, 80), lon(-170, 170), day(0, 364), hour(0, 23);
  auto make = [&](std::size_t n, std::uint64_t first_id, bool informative) {
    Dataset d{3, 1, {}};
    std::uniform_int_distribution<std::uint32_t> pick(0, 2);
    for (std::size_t i = 0; i < n; ++i) {
      SampleRecord r;
      r.sample_id = first_id + i;
      r.context = {lat(rng), lon(rng), day(rng), hour(rng)};
      r.label = informative ? (r.context.lat > 20.0 ? 2u : r.context.lat > -20.0 ? 1u : 0u) : pick(rng);
      r.embedding = {0.0};
      d.records.push_back(r);
    }
    return d;
  };
  TrainConfig c;
  c.seed = 2;
  c.lr = 1e-2;

  const Dataset train = make(3000, 0, true);
  const Dataset test = make(1000, 10000, true);
  const auto fit = train_context_mlp(train, c);
  std::size_t correct = 0;
  for (const auto& r : test.records) {
    const auto p = fit.model.predict(r.context);
    double sum = 0.0;
    for (double v : p.probs()) sum += v;
    CHECK(std::abs(sum - 1.0) < 1e-9);
    correct += p.argmax() == r.label;
  }
  CHECK(static_cast<double>(correct) / 1000.0 > 0.95);

  const Dataset null_train = make(3000, 0, false);
  const Dataset null_test = make(1000, 10000, false);
  const auto null_fit = train_context_mlp(null_train, c);
  correct = 0;
  for (const auto& r : null_test.records) correct += null_fit.model.predict(r.context).argmax() == r.label;
  const double acc = static_cast<double>(correct) / 1000.0;
  const double sigma = std::sqrt((1.0 / 3.0) * (2.0 / 3.0) / 1000.0);
  CHECK(std::abs(acc - 1.0 / 3.0) <= 3.0 * sigma);

  const PriorTable table = prior_table_from_model(fit.model, test);
  CHECK(table.size() == test.size());
  CHECK(table.n_classes() == 3);
  CHECK(train_context_mlp(train, c).model == fit.model);
}
