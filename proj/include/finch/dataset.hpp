#pragma once

#include <cstddef>
#include <cstdint>
#include <span>
#include <unordered_map>
#include <vector>

#include "finch/core.hpp"
#include "finch/features.hpp"

namespace finch {

/// One row of a dataset: an audio embedding with its label and context.
struct SampleRecord {
  std::uint64_t sample_id = 0;
  std::uint32_t label = 0;
  SpatioTemporalContext context;
  std::vector<double> embedding;

  bool operator==(const SampleRecord&) const = default;
};

struct Dataset {
  std::size_t n_classes = 0;
  std::size_t dim = 0;
  std::vector<SampleRecord> records;

  std::size_t size() const { return records.size(); }
  // Throws on empty data, ragged embeddings, labels >= n_classes or
  // duplicate sample ids.
  void validate() const;

  bool operator==(const Dataset&) const = default;
};

/// Precomputed context priors, one row per sample id.
///
/// Rows are kept exactly as stored (so files round-trip bit-for-bit) and a
/// renormalized double-precision copy is built for lookups. Lookups by id go
/// through a hash index.
class PriorTable {
 public:
  PriorTable() = default;
  PriorTable(std::size_t n_classes, std::vector<std::uint64_t> ids, std::vector<float> raw_rows);

  // Rows quantized to bytes, rescaled by 1/255 before normalization.
  static PriorTable from_quantized(std::size_t n_classes, std::vector<std::uint64_t> ids,
                                   std::span<const std::uint8_t> bytes);
  static PriorTable from_distributions(std::vector<std::uint64_t> ids,
                                       std::span<const CategoricalDistribution> rows);

  std::size_t size() const { return ids_.size(); }
  std::size_t n_classes() const { return n_classes_; }
  std::span<const std::uint64_t> ids() const { return ids_; }
  std::span<const float> raw_row(std::size_t index) const;

  bool contains(std::uint64_t sample_id) const { return index_.contains(sample_id); }
  // Renormalized row; throws NotFound for an unknown id.
  std::span<const double> row(std::uint64_t sample_id) const;

  bool operator==(const PriorTable& other) const {
    return n_classes_ == other.n_classes_ && ids_ == other.ids_ && raw_ == other.raw_;
  }

 private:
  std::size_t n_classes_ = 0;
  std::vector<std::uint64_t> ids_;
  std::vector<float> raw_;
  std::vector<double> normalized_;
  std::unordered_map<std::uint64_t, std::size_t> index_;
};

CategoricalDistribution lookup_prior(const PriorTable& table, std::uint64_t sample_id);
// Uniform fallback for ids missing from the table.
CategoricalDistribution lookup_prior_or_uniform(const PriorTable& table, std::uint64_t sample_id);

}  // namespace finch
