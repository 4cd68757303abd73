#include "finch/synthetic.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <random>

#include "finch/error.hpp"
#include "finch/fusion.hpp"
#include "finch/training.hpp"

namespace finch {

namespace {

constexpr std::uint64_t kModelStream = 1;
constexpr std::uint64_t kSampleStream = 2;
constexpr std::uint64_t kCorruptionStream = 3;

constexpr double kLatSpan = 60.0;
constexpr double kLonSpan = 150.0;
constexpr double kHomeAffinity = 1.0;
constexpr double kAwayAffinityMax = 0.8;
constexpr double kConfidentWrongMass = 0.95;

double as_float(double v) { return static_cast<double>(static_cast<float>(v)); }

std::size_t grid_columns(std::size_t n_cells) {
  return static_cast<std::size_t>(std::ceil(std::sqrt(static_cast<double>(n_cells))));
}

}  // namespace

CorruptionMode parse_corruption_mode(const std::string& name) {
  if (name == "none") return CorruptionMode::none;
  if (name == "shuffle") return CorruptionMode::shuffle;
  if (name == "uniform") return CorruptionMode::uniform;
  if (name == "confident_wrong") return CorruptionMode::confident_wrong;
  throw InvalidInput("unknown corruption mode '" + name + "'");
}

std::string to_string(CorruptionMode mode) {
  switch (mode) {
    case CorruptionMode::none: return "none";
    case CorruptionMode::shuffle: return "shuffle";
    case CorruptionMode::uniform: return "uniform";
    case CorruptionMode::confident_wrong: return "confident_wrong";
  }
  return "none";
}

void SyntheticConfig::validate() const {
  if (n_classes < 2) throw InvalidInput("synthetic: need at least 2 classes");
  if (embed_dim < 1) throw InvalidInput("synthetic: embedding dimension must be positive");
  if (n_cells < 2) throw InvalidInput("synthetic: need at least 2 context cells");
  if (n_samples < 1) throw InvalidInput("synthetic: need at least 1 sample");
  if (!(class_sep >= 0.0) || !std::isfinite(class_sep)) {
    throw InvalidInput("synthetic: class_sep must be finite and nonnegative");
  }
  if (!(prior_peakedness >= 0.0) || !std::isfinite(prior_peakedness)) {
    throw InvalidInput("synthetic: prior_peakedness must be finite and nonnegative");
  }
  if (!(corruption_fraction >= 0.0 && corruption_fraction <= 1.0)) {
    throw InvalidInput("synthetic: corruption_fraction must lie in [0, 1]");
  }
  if (!(dependence_strength >= 0.0 && dependence_strength <= 1.0)) {
    throw InvalidInput("synthetic: dependence_strength must lie in [0, 1]");
  }
  if (!(class_prior_skew >= 0.0) || !std::isfinite(class_prior_skew)) {
    throw InvalidInput("synthetic: class_prior_skew must be finite and nonnegative");
  }
}

SyntheticConfig synthetic_preset(const std::string& name) {
  SyntheticConfig c;
  if (name == "ci") {
    return c;
  }
  if (name == "dependent") {
    c.dependence_strength = 1.0;
    return c;
  }
  if (name == "heterogeneous") {
    c.n_classes = 8;
    c.embed_dim = 8;
    c.n_cells = 16;
    c.n_samples = 20000;
    c.class_sep = 2.0;
    c.prior_peakedness = 3.0;
    c.corruption = CorruptionMode::confident_wrong;
    c.corruption_fraction = 0.5;
    c.region_coupled = true;
    return c;
  }
  throw InvalidInput("unknown synthetic preset '" + name + "'");
}

SyntheticModel::SyntheticModel(const SyntheticConfig& config) : config_(config) {
  config_.validate();
  const std::size_t C = config_.n_classes;
  const std::size_t D = config_.embed_dim;
  const std::size_t G = config_.n_cells;
  std::mt19937_64 rng(derive_seed(config_.seed, kModelStream));
  std::uniform_real_distribution<double> away(0.0, kAwayAffinityMax);
  std::normal_distribution<double> normal(0.0, 1.0);

  class_prior_.resize(C);
  for (std::size_t y = 0; y < C; ++y) {
    class_prior_[y] =
        std::exp(-config_.class_prior_skew * static_cast<double>(y) / static_cast<double>(C));
  }
  const double prior_total = std::accumulate(class_prior_.begin(), class_prior_.end(), 0.0);
  for (double& p : class_prior_) {
    p /= prior_total;
  }

  log_cell_given_y_.resize(C * G);
  for (std::size_t y = 0; y < C; ++y) {
    std::span<double> row(&log_cell_given_y_[y * G], G);
    for (std::size_t g = 0; g < G; ++g) {
      const double affinity = g == y % G ? kHomeAffinity : away(rng);
      row[g] = config_.prior_peakedness * affinity;
    }
    const double lse = log_sum_exp(row);
    for (double& v : row) {
      v -= lse;
    }
  }

  // Class means sit on a simplex-like frame so that every pair is class_sep
  // apart when D >= C; otherwise random unit directions approximate that.
  means_.assign(C * D, 0.0);
  const double radius = config_.class_sep / std::sqrt(2.0);
  for (std::size_t y = 0; y < C; ++y) {
    std::span<double> mu(&means_[y * D], D);
    if (D >= C) {
      mu[y] = radius;
      continue;
    }
    double norm = 0.0;
    for (double& v : mu) {
      v = normal(rng);
      norm += v * v;
    }
    norm = std::sqrt(norm);
    for (double& v : mu) {
      v = norm > 0.0 ? radius * v / norm : 0.0;
    }
  }

  offsets_.resize(G * D);
  for (double& v : offsets_) {
    v = normal(rng);
  }

  const std::size_t cols = grid_columns(G);
  const std::size_t rows = (G + cols - 1) / cols;
  contexts_.resize(G);
  for (std::size_t g = 0; g < G; ++g) {
    const std::size_t r = g / cols;
    const std::size_t c = g % cols;
    SpatioTemporalContext& ctx = contexts_[g];
    ctx.lat = as_float(-kLatSpan + (static_cast<double>(r) + 0.5) * 2.0 * kLatSpan /
                                       static_cast<double>(rows));
    ctx.lon = as_float(-kLonSpan + (static_cast<double>(c) + 0.5) * 2.0 * kLonSpan /
                                       static_cast<double>(cols));
    const std::uint64_t h = derive_seed(g, 0xda7e);
    ctx.day = static_cast<double>(h % 365);
    ctx.hour = static_cast<double>((h >> 32) % 24);
  }
}

double SyntheticModel::cell_given_class(std::size_t y, std::size_t cell) const {
  return std::exp(log_cell_given_y_[y * config_.n_cells + cell]);
}

std::span<const double> SyntheticModel::class_mean(std::size_t y) const {
  return std::span<const double>(means_).subspan(y * config_.embed_dim, config_.embed_dim);
}

std::span<const double> SyntheticModel::cell_offset(std::size_t cell) const {
  return std::span<const double>(offsets_).subspan(cell * config_.embed_dim, config_.embed_dim);
}

double SyntheticModel::log_likelihood(std::span<const double> x, std::size_t y,
                                      std::size_t cell) const {
  if (x.size() != config_.embed_dim) {
    throw DimensionError("synthetic: embedding has the wrong dimension");
  }
  const auto mu = class_mean(y);
  const auto off = cell_offset(cell);
  const double kappa = config_.dependence_strength;
  double sq = 0.0;
  for (std::size_t d = 0; d < x.size(); ++d) {
    const double r = x[d] - mu[d] - kappa * off[d];
    sq += r * r;
  }
  return -0.5 * sq;
}

CategoricalDistribution SyntheticModel::audio_posterior(std::span<const double> x) const {
  const std::size_t C = config_.n_classes;
  const std::size_t G = config_.n_cells;
  std::vector<double> scores(C);
  std::vector<double> per_cell(G);
  for (std::size_t y = 0; y < C; ++y) {
    double ll = 0.0;
    if (config_.dependence_strength == 0.0) {
      ll = log_likelihood(x, y, 0);
    } else {
      for (std::size_t g = 0; g < G; ++g) {
        per_cell[g] = log_cell_given_y_[y * G + g] + log_likelihood(x, y, g);
      }
      ll = log_sum_exp(per_cell);
    }
    scores[y] = std::log(class_prior_[y]) + ll;
  }
  return softmax(scores);
}

CategoricalDistribution SyntheticModel::context_posterior(std::size_t cell) const {
  const std::size_t C = config_.n_classes;
  std::vector<double> scores(C);
  for (std::size_t y = 0; y < C; ++y) {
    scores[y] = std::log(class_prior_[y]) + log_cell_given_y_[y * config_.n_cells + cell];
  }
  return softmax(scores);
}

CategoricalDistribution SyntheticModel::joint_posterior(std::span<const double> x,
                                                        std::size_t cell) const {
  const std::size_t C = config_.n_classes;
  std::vector<double> scores(C);
  for (std::size_t y = 0; y < C; ++y) {
    scores[y] = std::log(class_prior_[y]) + log_cell_given_y_[y * config_.n_cells + cell] +
                log_likelihood(x, y, cell);
  }
  return softmax(scores);
}

std::vector<SyntheticSample> generate(const SyntheticModel& model) {
  const SyntheticConfig& cfg = model.config();
  const std::size_t C = cfg.n_classes;
  const std::size_t D = cfg.embed_dim;
  const std::size_t G = cfg.n_cells;
  std::mt19937_64 rng(derive_seed(cfg.seed, kSampleStream));
  std::normal_distribution<double> normal(0.0, 1.0);
  std::discrete_distribution<std::size_t> class_dist(model.class_prior().begin(),
                                                     model.class_prior().end());
  std::vector<std::discrete_distribution<std::size_t>> cell_dists;
  cell_dists.reserve(C);
  for (std::size_t y = 0; y < C; ++y) {
    std::vector<double> w(G);
    for (std::size_t g = 0; g < G; ++g) {
      w[g] = model.cell_given_class(y, g);
    }
    cell_dists.emplace_back(w.begin(), w.end());
  }

  std::vector<SyntheticSample> samples;
  samples.reserve(cfg.n_samples);
  for (std::size_t i = 0; i < cfg.n_samples; ++i) {
    const std::size_t y = class_dist(rng);
    const std::size_t g = cell_dists[y](rng);
    std::vector<double> x(D);
    const auto mu = model.class_mean(y);
    const auto off = model.cell_offset(g);
    for (std::size_t d = 0; d < D; ++d) {
      x[d] = mu[d] + cfg.dependence_strength * off[d] + normal(rng);
    }
    SampleRecord rec;
    rec.sample_id = i;
    rec.label = static_cast<std::uint32_t>(y);
    rec.context = model.cell_context(g);
    rec.embedding = std::move(x);

    CategoricalDistribution audio = model.audio_posterior(rec.embedding);
    CategoricalDistribution context = model.context_posterior(g);
    CategoricalDistribution joint = model.joint_posterior(rec.embedding, g);
    samples.push_back(
        {std::move(rec), g, std::move(audio), std::move(context), std::move(joint), false});
  }
  return samples;
}

std::vector<SyntheticSample> generate(const SyntheticConfig& config) {
  return generate(SyntheticModel(config));
}

CategoricalDistribution bayes_posterior(const SyntheticSample& sample,
                                        const SyntheticModel& model) {
  if (model.config().dependence_strength != 0.0) {
    throw InvalidInput("bayes_posterior: closed form requires conditional independence");
  }
  const CategoricalDistribution audio = model.audio_posterior(sample.record.embedding);
  const CategoricalDistribution context = model.context_posterior(sample.cell);
  const auto class_prior = model.class_prior();
  std::vector<double> scores(audio.size());
  for (std::size_t y = 0; y < scores.size(); ++y) {
    scores[y] = std::log(audio[y]) + std::log(context[y]) - std::log(class_prior[y]);
  }
  return softmax(scores);
}

void corrupt_priors(std::vector<SyntheticSample>& samples, const SyntheticConfig& config) {
  config.validate();
  if (config.corruption == CorruptionMode::none || config.corruption_fraction == 0.0 ||
      samples.empty()) {
    return;
  }
  const std::size_t C = samples.front().context_posterior.size();
  std::mt19937_64 rng(derive_seed(config.seed, kCorruptionStream));

  std::vector<std::size_t> chosen;
  if (config.region_coupled) {
    const double lon_cut = -kLonSpan + 2.0 * kLonSpan * config.corruption_fraction;
    for (std::size_t i = 0; i < samples.size(); ++i) {
      if (samples[i].record.context.lon < lon_cut) {
        chosen.push_back(i);
      }
    }
  } else {
    std::vector<std::size_t> all(samples.size());
    std::iota(all.begin(), all.end(), std::size_t{0});
    std::shuffle(all.begin(), all.end(), rng);
    const auto k = static_cast<std::size_t>(
        std::llround(config.corruption_fraction * static_cast<double>(samples.size())));
    chosen.assign(all.begin(), all.begin() + static_cast<std::ptrdiff_t>(k));
    std::sort(chosen.begin(), chosen.end());
  }

  for (std::size_t i : chosen) {
    SyntheticSample& s = samples[i];
    std::vector<double> probs(s.context_posterior.probs().begin(),
                              s.context_posterior.probs().end());
    switch (config.corruption) {
      case CorruptionMode::shuffle: {
        // Sattolo's algorithm: a uniformly random single cycle, so no entry
        // keeps its position.
        std::vector<std::size_t> perm(C);
        std::iota(perm.begin(), perm.end(), std::size_t{0});
        for (std::size_t j = C - 1; j > 0; --j) {
          std::uniform_int_distribution<std::size_t> pick(0, j - 1);
          std::swap(perm[j], perm[pick(rng)]);
        }
        std::vector<double> shuffled(C);
        for (std::size_t j = 0; j < C; ++j) {
          shuffled[j] = probs[perm[j]];
        }
        probs = std::move(shuffled);
        break;
      }
      case CorruptionMode::uniform:
        std::fill(probs.begin(), probs.end(), 1.0 / static_cast<double>(C));
        break;
      case CorruptionMode::confident_wrong: {
        std::uniform_int_distribution<std::size_t> pick(0, C - 2);
        std::size_t wrong = pick(rng);
        if (wrong >= s.record.label) {
          ++wrong;
        }
        std::fill(probs.begin(), probs.end(),
                  (1.0 - kConfidentWrongMass) / static_cast<double>(C - 1));
        probs[wrong] = kConfidentWrongMass;
        break;
      }
      case CorruptionMode::none:
        break;
    }
    s.context_posterior = CategoricalDistribution(std::move(probs));
    s.corrupted = true;
  }
}

std::vector<double> default_omega_grid() {
  std::vector<double> grid(101);
  for (std::size_t i = 0; i < grid.size(); ++i) {
    grid[i] = 0.1 * static_cast<double>(i);
  }
  return grid;
}

OmegaGridResult omega_grid_oracle(std::span<const double> audio_log_probs,
                                  std::span<const double> prior, std::size_t label,
                                  std::span<const double> grid, double epsilon) {
  if (std::find(grid.begin(), grid.end(), 0.0) == grid.end()) {
    throw InvalidInput("omega_grid_oracle: grid must contain 0");
  }
  if (label >= audio_log_probs.size() || prior.size() != audio_log_probs.size()) {
    throw InvalidInput("omega_grid_oracle: label or prior size mismatch");
  }
  // Losses are computed from score differences against the label so that
  // losses far below machine epsilon still order correctly.
  std::vector<double> log_prior(prior.size());
  for (std::size_t k = 0; k < prior.size(); ++k) {
    log_prior[k] = std::log(prior[k] + epsilon);
  }
  const double audio_y = audio_log_probs[label];
  OmegaGridResult out;
  out.losses.reserve(grid.size());
  for (double omega : grid) {
    if (!(omega >= 0.0) || !std::isfinite(omega)) {
      throw InvalidInput("omega_grid_oracle: grid values must be finite and nonnegative");
    }
    if (audio_y == -std::numeric_limits<double>::infinity()) {
      out.losses.push_back(std::numeric_limits<double>::infinity());
      continue;
    }
    std::vector<double> diff;
    diff.reserve(prior.size() - 1);
    double top = -std::numeric_limits<double>::infinity();
    for (std::size_t k = 0; k < prior.size(); ++k) {
      if (k == label) continue;
      const double d = (audio_log_probs[k] - audio_y) + omega * (log_prior[k] - log_prior[label]);
      diff.push_back(d);
      top = std::max(top, d);
    }
    double loss = 0.0;
    if (top <= 0.0) {
      double sum = 0.0;
      for (double d : diff) sum += std::exp(d);
      loss = std::log1p(sum);
    } else {
      double sum = std::exp(-top);
      for (double d : diff) sum += std::exp(d - top);
      loss = top + std::log(sum);
    }
    out.losses.push_back(loss);
  }
  out.best_omega = std::numeric_limits<double>::infinity();
  out.best_loss = std::numeric_limits<double>::infinity();
  for (std::size_t i = 0; i < grid.size(); ++i) {
    if (out.losses[i] < out.best_loss ||
        (out.losses[i] == out.best_loss && grid[i] < out.best_omega)) {
      out.best_omega = grid[i];
      out.best_loss = out.losses[i];
    }
  }
  return out;
}

Dataset to_dataset(const std::vector<SyntheticSample>& samples, std::size_t n_classes,
                   std::size_t dim) {
  Dataset ds;
  ds.n_classes = n_classes;
  ds.dim = dim;
  ds.records.reserve(samples.size());
  for (const SyntheticSample& s : samples) {
    ds.records.push_back(s.record);
  }
  return ds;
}

PriorTable to_prior_table(const std::vector<SyntheticSample>& samples) {
  std::vector<std::uint64_t> ids;
  std::vector<CategoricalDistribution> rows;
  ids.reserve(samples.size());
  rows.reserve(samples.size());
  for (const SyntheticSample& s : samples) {
    ids.push_back(s.record.sample_id);
    rows.push_back(s.context_posterior);
  }
  return PriorTable::from_distributions(std::move(ids), rows);
}

}  // namespace finch
