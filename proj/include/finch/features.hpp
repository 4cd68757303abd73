#pragma once

#include <array>
#include <cstddef>

#include "finch/core.hpp"

namespace finch {

inline constexpr double kDefaultHour = 12.0;

/// Where and when a recording was made.
struct SpatioTemporalContext {
  double lat = 0.0;   // degrees, [-90, 90]
  double lon = 0.0;   // degrees, [-180, 180]
  double day = 0.0;   // day of year, [0, 365)
  double hour = kDefaultHour;  // hour of day, [0, 24)

  void validate() const;
  bool operator==(const SpatioTemporalContext&) const = default;
};

inline constexpr std::size_t kMetadataFeatures = 6;

// [sin(2πd/365), cos(2πd/365), sin(2πh/24), cos(2πh/24), lat/90, lon/180].
// The 365 denominator is used in leap years too.
std::array<double, kMetadataFeatures> encode_metadata(const SpatioTemporalContext& ctx);

/// Gating-network input. Layout is frozen; checkpoints depend on it:
///   0 audio max prob, 1 audio entropy, 2 audio margin,
///   3 prior max prob, 4 prior entropy, 5 prior margin,
///   6..11 encode_metadata(ctx).
struct GatingFeatures {
  static constexpr std::size_t kSize = 12;
  std::array<double, kSize> values{};

  double operator[](std::size_t i) const { return values[i]; }
};

GatingFeatures build_gating_features(const CategoricalDistribution& audio,
                                     const CategoricalDistribution& prior,
                                     const SpatioTemporalContext& ctx);

}  // namespace finch
