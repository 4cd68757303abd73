#include "finch/gradcheck.hpp"

#include <algorithm>
#include <cmath>
#include <functional>
#include <random>

namespace finch {

namespace {

void add_entry(GradCheckReport& report, std::string name, double analytic, double numeric,
               double tolerance) {
  GradCheckEntry e;
  e.name = std::move(name);
  e.analytic = analytic;
  e.numeric = numeric;
  e.rel_error = relative_error(analytic, numeric);
  const bool both_zero = std::abs(analytic - numeric) <= kGradCheckAbsFloor;
  e.pass = both_zero || e.rel_error < tolerance;
  report.max_rel_error = std::max(report.max_rel_error, e.rel_error);
  report.pass = report.pass && e.pass;
  report.entries.push_back(std::move(e));
}

// Central difference of f with respect to the scalar *slot.
double central_difference(double* slot, double step, const std::function<double()>& f) {
  const double saved = *slot;
  *slot = saved + step;
  const double up = f();
  *slot = saved - step;
  const double down = f();
  *slot = saved;
  return (up - down) / (2.0 * step);
}

std::string indexed(const char* name, std::size_t i) {
  return std::string(name) + "[" + std::to_string(i) + "]";
}

}  // namespace

double relative_error(double analytic, double numeric) {
  const double scale = std::max(std::abs(analytic), std::abs(numeric));
  if (scale == 0.0) {
    return 0.0;
  }
  return std::abs(analytic - numeric) / scale;
}

GradCheckReport gradcheck_head(const AudioHead& head, std::span<const SampleRecord> records,
                               std::span<const std::size_t> batch, double step,
                               double tolerance) {
  GradCheckReport report;
  report.group = "head";
  HeadGradients grads;
  head_batch_loss(head, records, batch, &grads);
  AudioHead probe = head;
  auto f = [&] { return head_batch_loss(probe, records, batch, nullptr); };
  for (std::size_t i = 0; i < probe.weights.size(); ++i) {
    add_entry(report, indexed("weights", i), grads.weights[i],
              central_difference(&probe.weights[i], step, f), tolerance);
  }
  for (std::size_t i = 0; i < probe.bias.size(); ++i) {
    add_entry(report, indexed("bias", i), grads.bias[i],
              central_difference(&probe.bias[i], step, f), tolerance);
  }
  return report;
}

GradCheckReport gradcheck_fixed_weight(const FixedWeightParams& params,
                                       std::span<const FusionSample> samples,
                                       std::span<const std::size_t> batch, double lambda_var,
                                       double step, double tolerance) {
  GradCheckReport report;
  report.group = "fixed_weight";
  FixedWeightGradients grads;
  fixed_weight_batch_loss(params, samples, batch, lambda_var, &grads);
  FixedWeightParams probe = params;
  auto f = [&] { return fixed_weight_batch_loss(probe, samples, batch, lambda_var, nullptr); };
  add_entry(report, "omega_raw", grads.omega_raw, central_difference(&probe.omega_raw, step, f),
            tolerance);
  add_entry(report, "temp_raw", grads.temp_raw, central_difference(&probe.temp_raw, step, f),
            tolerance);
  add_entry(report, "eps_raw", grads.eps_raw, central_difference(&probe.eps_raw, step, f),
            tolerance);
  return report;
}

GradCheckReport gradcheck_adaptive(const GateParameters& gate,
                                   std::span<const FusionSample> samples,
                                   std::span<const std::size_t> batch, double lambda_var,
                                   GateMode mode, std::uint64_t mask_seed, double step,
                                   double tolerance) {
  GradCheckReport report;
  report.group = "adaptive";
  AdaptiveGradients grads;
  adaptive_batch_loss(gate, samples, batch, lambda_var, mode, mask_seed, &grads);
  GateParameters probe = gate;
  auto f = [&] {
    return adaptive_batch_loss(probe, samples, batch, lambda_var, mode, mask_seed, nullptr).loss;
  };
  for (std::size_t i = 0; i < probe.w1.size(); ++i) {
    add_entry(report, indexed("w1", i), grads.gate.w1[i],
              central_difference(&probe.w1[i], step, f), tolerance);
  }
  for (std::size_t i = 0; i < probe.b1.size(); ++i) {
    add_entry(report, indexed("b1", i), grads.gate.b1[i],
              central_difference(&probe.b1[i], step, f), tolerance);
  }
  for (std::size_t i = 0; i < probe.w2.size(); ++i) {
    add_entry(report, indexed("w2", i), grads.gate.w2[i],
              central_difference(&probe.w2[i], step, f), tolerance);
  }
  add_entry(report, "b2", grads.gate.b2, central_difference(&probe.b2, step, f), tolerance);
  add_entry(report, "omega_max_raw", grads.gate.omega_max_raw,
            central_difference(&probe.omega_max_raw, step, f), tolerance);
  add_entry(report, "temp_raw", grads.temp_raw, central_difference(&probe.temp_raw, step, f),
            tolerance);
  add_entry(report, "eps_raw", grads.gate.eps_raw, central_difference(&probe.eps_raw, step, f),
            tolerance);
  return report;
}

GateParameters random_gate(std::size_t hidden, double dropout_rate, double scale,
                           std::uint64_t seed) {
  GateParameters g = GateParameters::zeros(hidden, dropout_rate);
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> normal(0.0, scale);
  for (double& w : g.w1) w = normal(rng);
  for (double& b : g.b1) b = normal(rng);
  for (double& w : g.w2) w = normal(rng);
  g.b2 = normal(rng);
  g.omega_max_raw = normal(rng);
  g.temp_raw = 0.3 * normal(rng);
  g.eps_raw = normal(rng);
  return g;
}

}  // namespace finch
