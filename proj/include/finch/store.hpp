#pragma once

#include <filesystem>
#include <string>

#include "finch/dataset.hpp"
#include "finch/error.hpp"
#include "finch/model.hpp"

namespace finch {

class StoreError : public Error {
 public:
  using Error::Error;
};
class MagicMismatch : public StoreError {
 public:
  using StoreError::StoreError;
};
class UnsupportedVersion : public StoreError {
 public:
  using StoreError::StoreError;
};
class TruncatedFile : public StoreError {
 public:
  using StoreError::StoreError;
};
class DuplicateId : public StoreError {
 public:
  using StoreError::StoreError;
};
class MalformedFile : public StoreError {
 public:
  using StoreError::StoreError;
};
class NotFound : public StoreError {
 public:
  using StoreError::StoreError;
};
class IoError : public StoreError {
 public:
  using StoreError::StoreError;
};

inline constexpr std::uint16_t kDatasetVersion = 1;
inline constexpr std::uint16_t kPriorTableVersion = 1;

// Dataset file, little-endian:
//   "FNDS" u16 version, u64 N, u32 D, u32 C,
//   N x (u64 id, u32 label, f32 lat, f32 lon, f32 day, f32 hour, D x f64).
// Context fields are narrowed to f32 on write.
void write_dataset(const Dataset& dataset, const std::filesystem::path& path);
Dataset read_dataset(const std::filesystem::path& path);

// Prior table file, little-endian:
//   "FPRT" u16 version, u64 N, u32 C, N x (u64 id, C x f32).
void write_prior_table(const PriorTable& table, const std::filesystem::path& path);
PriorTable read_prior_table(const std::filesystem::path& path);

// Checkpoint file: canonical JSON (sorted keys, shortest round-trip decimal
// doubles), so write -> read -> write is byte-identical.
void write_checkpoint(const StageCheckpoint& ckpt, const std::filesystem::path& path);
StageCheckpoint read_checkpoint(const std::filesystem::path& path);

std::string read_text_file(const std::filesystem::path& path);
void write_text_file(const std::filesystem::path& path, const std::string& text);

}  // namespace finch
