#include "finch/features.hpp"

#include <cmath>
#include <numbers>

#include "finch/error.hpp"

namespace finch {

void SpatioTemporalContext::validate() const {
  const bool ok = std::isfinite(lat) && std::isfinite(lon) && std::isfinite(day) &&
                  std::isfinite(hour) && lat >= -90.0 && lat <= 90.0 && lon >= -180.0 &&
                  lon <= 180.0 && day >= 0.0 && day < 365.0 && hour >= 0.0 && hour < 24.0;
  if (!ok) {
    throw InvalidInput("spatiotemporal context out of range");
  }
}

std::array<double, kMetadataFeatures> encode_metadata(const SpatioTemporalContext& ctx) {
  ctx.validate();
  constexpr double two_pi = 2.0 * std::numbers::pi;
  const double day_angle = two_pi * ctx.day / 365.0;
  const double hour_angle = two_pi * ctx.hour / 24.0;
  return {std::sin(day_angle), std::cos(day_angle), std::sin(hour_angle),
          std::cos(hour_angle), ctx.lat / 90.0, ctx.lon / 180.0};
}

GatingFeatures build_gating_features(const CategoricalDistribution& audio,
                                     const CategoricalDistribution& prior,
                                     const SpatioTemporalContext& ctx) {
  if (audio.size() != prior.size()) {
    throw DimensionError("gating features: audio and prior class counts differ");
  }
  const Top2Stats a = top2_stats(audio);
  const Top2Stats p = top2_stats(prior);
  const auto meta = encode_metadata(ctx);

  GatingFeatures u;
  u.values = {a.max_prob, entropy(audio), a.margin,
              p.max_prob, entropy(prior), p.margin,
              meta[0],    meta[1],        meta[2],
              meta[3],    meta[4],        meta[5]};
  return u;
}

}  // namespace finch
