#include "finch/diagnostics.hpp"

#include <Eigen/Dense>
#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>

#include "finch/error.hpp"

namespace finch {

namespace {

using EigenMatrix = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

Eigen::Map<const EigenMatrix> view(const Matrix& m) {
  return {m.data.data(), static_cast<Eigen::Index>(m.rows), static_cast<Eigen::Index>(m.cols)};
}

}  // namespace

Matrix Matrix::select_rows(std::span<const std::size_t> indices) const {
  Matrix out(indices.size(), cols);
  for (std::size_t i = 0; i < indices.size(); ++i) {
    std::copy_n(&data[indices[i] * cols], cols, &out.data[i * cols]);
  }
  return out;
}

Matrix LinearProbe::predict(const Matrix& x) const {
  if (x.cols != x_mean.size()) {
    throw DimensionError("probe: input width differs from training");
  }
  const Eigen::RowVectorXd xm = Eigen::Map<const Eigen::RowVectorXd>(
      x_mean.data(), static_cast<Eigen::Index>(x_mean.size()));
  const Eigen::RowVectorXd ym = Eigen::Map<const Eigen::RowVectorXd>(
      y_mean.data(), static_cast<Eigen::Index>(y_mean.size()));
  const EigenMatrix pred = ((view(x).rowwise() - xm) * view(weights)).rowwise() + ym;
  Matrix out(x.rows, y_mean.size());
  Eigen::Map<EigenMatrix>(out.data.data(), static_cast<Eigen::Index>(out.rows),
                          static_cast<Eigen::Index>(out.cols)) = pred;
  return out;
}

LinearProbe fit_linear_probe(const Matrix& x, const Matrix& y, double ridge) {
  if (x.rows != y.rows) {
    throw DimensionError("probe: X and Y row counts differ");
  }
  if (x.rows < 2) {
    throw InvalidInput("probe: need at least 2 rows");
  }
  if (!(ridge >= 0.0)) {
    throw InvalidInput("probe: ridge must be nonnegative");
  }
  const auto X = view(x);
  const auto Y = view(y);
  const Eigen::RowVectorXd xm = X.colwise().mean();
  const Eigen::RowVectorXd ym = Y.colwise().mean();
  const Eigen::MatrixXd Xc = X.rowwise() - xm;
  const Eigen::MatrixXd Yc = Y.rowwise() - ym;
  Eigen::MatrixXd gram = Xc.transpose() * Xc;
  gram.diagonal().array() += ridge;
  const Eigen::MatrixXd W = gram.ldlt().solve(Xc.transpose() * Yc);

  LinearProbe probe;
  probe.weights = Matrix(x.cols, y.cols);
  Eigen::Map<EigenMatrix>(probe.weights.data.data(), static_cast<Eigen::Index>(x.cols),
                          static_cast<Eigen::Index>(y.cols)) = W;
  probe.x_mean.assign(xm.data(), xm.data() + xm.size());
  probe.y_mean.assign(ym.data(), ym.data() + ym.size());
  return probe;
}

double r2_score(std::span<const double> y_true, std::span<const double> y_pred,
                double baseline_mean) {
  if (y_true.size() != y_pred.size()) {
    throw DimensionError("r2_score: lengths differ");
  }
  if (y_true.size() < 2) {
    throw InvalidInput("r2_score: need at least 2 points");
  }
  double ss_res = 0.0;
  double ss_tot = 0.0;
  for (std::size_t i = 0; i < y_true.size(); ++i) {
    ss_res += (y_true[i] - y_pred[i]) * (y_true[i] - y_pred[i]);
    ss_tot += (y_true[i] - baseline_mean) * (y_true[i] - baseline_mean);
  }
  if (ss_tot == 0.0) {
    return 0.0;
  }
  return 1.0 - ss_res / ss_tot;
}

double cohens_d(std::span<const double> a) {
  if (a.size() < 2) {
    throw InvalidInput("cohens_d: need at least 2 values");
  }
  const double n = static_cast<double>(a.size());
  const double mean = std::accumulate(a.begin(), a.end(), 0.0) / n;
  double ss = 0.0;
  for (double v : a) {
    ss += (v - mean) * (v - mean);
  }
  const double sd = std::sqrt(ss / (n - 1.0));
  if (!(sd > 0.0)) {
    throw InvalidInput("cohens_d: values have zero spread");
  }
  return mean / sd;
}

ProbeBlock make_probe_block(Matrix x, Matrix y, std::uint64_t seed, double test_fraction) {
  if (x.rows != y.rows) {
    throw DimensionError("probe block: X and Y row counts differ");
  }
  const std::size_t n = x.rows;
  if (n < 4) {
    throw InvalidInput("probe block: need at least 4 rows");
  }
  auto n_test =
      static_cast<std::size_t>(std::llround(test_fraction * static_cast<double>(n)));
  n_test = std::clamp<std::size_t>(n_test, 2, n - 2);
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::mt19937_64 rng(seed);
  std::shuffle(order.begin(), order.end(), rng);

  ProbeBlock block{std::move(x), std::move(y), {}, {}};
  block.test.assign(order.begin(), order.begin() + static_cast<std::ptrdiff_t>(n_test));
  block.train.assign(order.begin() + static_cast<std::ptrdiff_t>(n_test), order.end());
  std::sort(block.train.begin(), block.train.end());
  std::sort(block.test.begin(), block.test.end());
  return block;
}

ProbeEvaluation evaluate_probe(const ProbeBlock& block, std::span<const std::size_t> perm,
                               double ridge) {
  const Matrix& x = block.x;
  Matrix y_perm(block.y.rows, block.y.cols);
  for (std::size_t i = 0; i < block.y.rows; ++i) {
    std::copy_n(&block.y.data[perm[i] * block.y.cols], block.y.cols, &y_perm.data[i * y_perm.cols]);
  }
  const LinearProbe probe =
      fit_linear_probe(x.select_rows(block.train), y_perm.select_rows(block.train), ridge);
  const Matrix y_test = y_perm.select_rows(block.test);
  const Matrix pred = probe.predict(x.select_rows(block.test));
  const std::size_t k = y_test.cols;

  ProbeEvaluation out;
  out.sample_gains.assign(y_test.rows, 0.0);
  for (std::size_t i = 0; i < y_test.rows; ++i) {
    double gain = 0.0;
    for (std::size_t c = 0; c < k; ++c) {
      const double base = y_test(i, c) - probe.y_mean[c];
      const double res = y_test(i, c) - pred(i, c);
      gain += base * base - res * res;
    }
    out.sample_gains[i] = gain / static_cast<double>(k);
  }
  out.improvement = std::accumulate(out.sample_gains.begin(), out.sample_gains.end(), 0.0) /
                    static_cast<double>(y_test.rows);

  double r2_sum = 0.0;
  std::size_t r2_count = 0;
  std::vector<double> truth(y_test.rows), guess(y_test.rows);
  for (std::size_t c = 0; c < k; ++c) {
    double ss_tot = 0.0;
    for (std::size_t i = 0; i < y_test.rows; ++i) {
      truth[i] = y_test(i, c);
      guess[i] = pred(i, c);
      ss_tot += (truth[i] - probe.y_mean[c]) * (truth[i] - probe.y_mean[c]);
    }
    if (ss_tot == 0.0) {
      continue;
    }
    r2_sum += r2_score(truth, guess, probe.y_mean[c]);
    ++r2_count;
  }
  out.r2 = r2_count ? r2_sum / static_cast<double>(r2_count) : 0.0;
  return out;
}

ProbeEvaluation evaluate_probe(const ProbeBlock& block, double ridge) {
  std::vector<std::size_t> identity(block.y.rows);
  std::iota(identity.begin(), identity.end(), std::size_t{0});
  return evaluate_probe(block, identity, ridge);
}

double permutation_test(std::span<const ProbeBlock> blocks, std::size_t n_perm,
                        std::uint64_t seed, double ridge) {
  if (n_perm < 99) {
    throw InvalidInput("permutation_test: need at least 99 permutations");
  }
  if (blocks.empty()) {
    throw InvalidInput("permutation_test: no blocks");
  }
  auto statistic = [&](const std::vector<std::vector<std::size_t>>* perms) {
    double total = 0.0;
    for (std::size_t b = 0; b < blocks.size(); ++b) {
      total += perms ? evaluate_probe(blocks[b], (*perms)[b], ridge).improvement
                     : evaluate_probe(blocks[b], ridge).improvement;
    }
    return total / static_cast<double>(blocks.size());
  };

  const double observed = statistic(nullptr);
  std::mt19937_64 rng(seed);
  std::vector<std::vector<std::size_t>> perms(blocks.size());
  std::size_t at_least = 0;
  for (std::size_t p = 0; p < n_perm; ++p) {
    for (std::size_t b = 0; b < blocks.size(); ++b) {
      perms[b].resize(blocks[b].y.rows);
      std::iota(perms[b].begin(), perms[b].end(), std::size_t{0});
      std::shuffle(perms[b].begin(), perms[b].end(), rng);
    }
    if (statistic(&perms) >= observed) {
      ++at_least;
    }
  }
  return static_cast<double>(1 + at_least) / static_cast<double>(1 + n_perm);
}

double permutation_test(const Matrix& x, const Matrix& y, std::size_t n_perm,
                        std::uint64_t seed, double ridge) {
  const ProbeBlock block = make_probe_block(x, y, derive_seed(seed, 0), 0.2);
  return permutation_test(std::span<const ProbeBlock>(&block, 1), n_perm, seed, ridge);
}

void aggregate_dependence_report(DependenceReport& report) {
  const std::size_t n = report.per_class_r2.size();
  report.n_classes_tested = n;
  if (n == 0) {
    report.mean_r2 = 0.0;
    report.frac_positive_improvement = 0.0;
    report.frac_r2_above_005 = 0.0;
    return;
  }
  report.mean_r2 =
      std::accumulate(report.per_class_r2.begin(), report.per_class_r2.end(), 0.0) /
      static_cast<double>(n);
  const auto positive = std::count_if(report.per_class_improvement.begin(),
                                      report.per_class_improvement.end(),
                                      [](double v) { return v > 0.0; });
  const auto explained = std::count_if(report.per_class_r2.begin(), report.per_class_r2.end(),
                                       [](double v) { return v > 0.05; });
  report.frac_positive_improvement = static_cast<double>(positive) / static_cast<double>(n);
  report.frac_r2_above_005 = static_cast<double>(explained) / static_cast<double>(n);
}

DependenceReport dependence_report(const Dataset& dataset, const PriorTable& priors,
                                   const DependenceOptions& options) {
  dataset.validate();
  if (priors.n_classes() != dataset.n_classes) {
    throw DimensionError("dependence report: prior table class count differs");
  }
  std::vector<std::vector<std::size_t>> by_class(dataset.n_classes);
  for (std::size_t i = 0; i < dataset.size(); ++i) {
    by_class[dataset.records[i].label].push_back(i);
  }

  DependenceReport report;
  std::vector<ProbeBlock> blocks;
  std::vector<double> pooled_gains;
  const std::size_t k = options.full_row ? dataset.n_classes : 3;
  for (std::size_t c = 0; c < dataset.n_classes; ++c) {
    const auto& members = by_class[c];
    if (members.size() < options.min_samples_per_class || members.size() < 4) {
      continue;
    }
    Matrix x(members.size(), dataset.dim);
    Matrix y(members.size(), k);
    for (std::size_t r = 0; r < members.size(); ++r) {
      const SampleRecord& rec = dataset.records[members[r]];
      std::copy(rec.embedding.begin(), rec.embedding.end(), &x.data[r * dataset.dim]);
      const CategoricalDistribution prior = lookup_prior(priors, rec.sample_id);
      if (options.full_row) {
        std::copy(prior.probs().begin(), prior.probs().end(), &y.data[r * k]);
      } else {
        const Top2Stats t = top2_stats(prior);
        y(r, 0) = t.max_prob;
        y(r, 1) = entropy(prior);
        y(r, 2) = t.margin;
      }
    }
    blocks.push_back(make_probe_block(std::move(x), std::move(y), derive_seed(options.seed, c)));
    const ProbeEvaluation eval = evaluate_probe(blocks.back(), options.ridge);
    report.classes_tested.push_back(c);
    report.per_class_r2.push_back(eval.r2);
    report.per_class_improvement.push_back(eval.improvement);
    pooled_gains.insert(pooled_gains.end(), eval.sample_gains.begin(), eval.sample_gains.end());
  }
  aggregate_dependence_report(report);
  if (blocks.empty()) {
    return report;
  }
  try {
    report.cohens_d = cohens_d(pooled_gains);
  } catch (const InvalidInput&) {
    report.cohens_d = 0.0;
  }
  report.permutation_p =
      permutation_test(blocks, options.n_perm, derive_seed(options.seed, 0x9e12), options.ridge);
  return report;
}

}  // namespace finch
