#include "finch/store.hpp"

#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>
#include <iterator>
#include <sstream>
#include <unordered_set>

namespace finch {

// ---------------------------------------------------------------------------
// In-memory containers

void Dataset::validate() const {
  if (records.empty()) {
    throw InvalidInput("dataset is empty");
  }
  if (n_classes < 2) {
    throw InvalidInput("dataset needs at least 2 classes");
  }
  std::unordered_set<std::uint64_t> seen;
  seen.reserve(records.size());
  for (const SampleRecord& r : records) {
    if (r.embedding.size() != dim) {
      throw DimensionError("record " + std::to_string(r.sample_id) + " has embedding size " +
                           std::to_string(r.embedding.size()) + ", expected " +
                           std::to_string(dim));
    }
    if (r.label >= n_classes) {
      throw InvalidInput("record " + std::to_string(r.sample_id) + " has label out of range");
    }
    if (!seen.insert(r.sample_id).second) {
      throw DuplicateId("duplicate sample id " + std::to_string(r.sample_id));
    }
  }
}

PriorTable::PriorTable(std::size_t n_classes, std::vector<std::uint64_t> ids,
                       std::vector<float> raw_rows)
    : n_classes_(n_classes), ids_(std::move(ids)), raw_(std::move(raw_rows)) {
  if (n_classes_ < 2) {
    throw InvalidInput("prior table needs at least 2 classes");
  }
  if (raw_.size() != ids_.size() * n_classes_) {
    throw DimensionError("prior table rows do not match ids x classes");
  }
  normalized_.resize(raw_.size());
  index_.reserve(ids_.size());
  for (std::size_t i = 0; i < ids_.size(); ++i) {
    if (!index_.emplace(ids_[i], i).second) {
      throw DuplicateId("duplicate prior row for sample id " + std::to_string(ids_[i]));
    }
    double sum = 0.0;
    for (std::size_t c = 0; c < n_classes_; ++c) {
      const float v = raw_[i * n_classes_ + c];
      if (!std::isfinite(v) || v < 0.0f) {
        throw MalformedFile("prior row for sample id " + std::to_string(ids_[i]) +
                            " has a negative or non-finite entry");
      }
      sum += static_cast<double>(v);
    }
    if (!(sum > 0.0)) {
      throw MalformedFile("prior row for sample id " + std::to_string(ids_[i]) + " is all zero");
    }
    for (std::size_t c = 0; c < n_classes_; ++c) {
      normalized_[i * n_classes_ + c] = static_cast<double>(raw_[i * n_classes_ + c]) / sum;
    }
  }
}

PriorTable PriorTable::from_quantized(std::size_t n_classes, std::vector<std::uint64_t> ids,
                                      std::span<const std::uint8_t> bytes) {
  std::vector<float> raw(bytes.size());
  for (std::size_t i = 0; i < bytes.size(); ++i) {
    raw[i] = static_cast<float>(bytes[i]) / 255.0f;
  }
  return PriorTable(n_classes, std::move(ids), std::move(raw));
}

PriorTable PriorTable::from_distributions(std::vector<std::uint64_t> ids,
                                          std::span<const CategoricalDistribution> rows) {
  if (rows.empty() || rows.size() != ids.size()) {
    throw DimensionError("prior table needs one distribution per id");
  }
  const std::size_t c = rows.front().size();
  std::vector<float> raw;
  raw.reserve(rows.size() * c);
  for (const auto& row : rows) {
    if (row.size() != c) {
      throw DimensionError("prior rows have differing class counts");
    }
    for (double p : row.probs()) {
      raw.push_back(static_cast<float>(p));
    }
  }
  return PriorTable(c, std::move(ids), std::move(raw));
}

std::span<const float> PriorTable::raw_row(std::size_t index) const {
  return std::span<const float>(raw_).subspan(index * n_classes_, n_classes_);
}

std::span<const double> PriorTable::row(std::uint64_t sample_id) const {
  const auto it = index_.find(sample_id);
  if (it == index_.end()) {
    throw NotFound("no prior row for sample id " + std::to_string(sample_id));
  }
  return std::span<const double>(normalized_).subspan(it->second * n_classes_, n_classes_);
}

CategoricalDistribution lookup_prior(const PriorTable& table, std::uint64_t sample_id) {
  const auto row = table.row(sample_id);
  return CategoricalDistribution(std::vector<double>(row.begin(), row.end()));
}

CategoricalDistribution lookup_prior_or_uniform(const PriorTable& table,
                                                std::uint64_t sample_id) {
  if (!table.contains(sample_id)) {
    return CategoricalDistribution::uniform(table.n_classes());
  }
  return lookup_prior(table, sample_id);
}

// ---------------------------------------------------------------------------
// Binary encoding

namespace {

constexpr char kDatasetMagic[4] = {'F', 'N', 'D', 'S'};
constexpr char kPriorMagic[4] = {'F', 'P', 'R', 'T'};

class ByteWriter {
 public:
  void bytes(const char* data, std::size_t n) { out_.append(data, n); }

  template <typename T>
  void uint(T v) {
    for (std::size_t i = 0; i < sizeof(T); ++i) {
      out_.push_back(static_cast<char>((static_cast<std::uint64_t>(v) >> (8 * i)) & 0xffu));
    }
  }
  void f32(float v) { uint(std::bit_cast<std::uint32_t>(v)); }
  void f64(double v) { uint(std::bit_cast<std::uint64_t>(v)); }

  const std::string& str() const { return out_; }

 private:
  std::string out_;
};

class ByteReader {
 public:
  ByteReader(const std::string& data, std::string what) : data_(data), what_(std::move(what)) {}

  void require(std::size_t n) const {
    if (data_.size() - pos_ < n) {
      throw TruncatedFile(what_ + ": file is truncated");
    }
  }
  void expect_magic(const char (&magic)[4]) {
    require(4);
    if (std::memcmp(data_.data() + pos_, magic, 4) != 0) {
      throw MagicMismatch(what_ + ": bad magic, expected \"" + std::string(magic, 4) + "\"");
    }
    pos_ += 4;
  }
  template <typename T>
  T uint() {
    require(sizeof(T));
    std::uint64_t v = 0;
    for (std::size_t i = 0; i < sizeof(T); ++i) {
      v |= static_cast<std::uint64_t>(static_cast<unsigned char>(data_[pos_ + i])) << (8 * i);
    }
    pos_ += sizeof(T);
    return static_cast<T>(v);
  }
  float f32() { return std::bit_cast<float>(uint<std::uint32_t>()); }
  double f64() { return std::bit_cast<double>(uint<std::uint64_t>()); }

  std::size_t remaining() const { return data_.size() - pos_; }

 private:
  const std::string& data_;
  std::string what_;
  std::size_t pos_ = 0;
};

void write_bytes(const std::filesystem::path& path, const std::string& bytes) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) {
    throw IoError("cannot open " + path.string() + " for writing");
  }
  out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  if (!out) {
    throw IoError("failed writing " + path.string());
  }
}

std::string read_bytes(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) {
    throw IoError("cannot open " + path.string());
  }
  return std::string(std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>());
}

}  // namespace

void write_dataset(const Dataset& dataset, const std::filesystem::path& path) {
  dataset.validate();
  ByteWriter w;
  w.bytes(kDatasetMagic, 4);
  w.uint<std::uint16_t>(kDatasetVersion);
  w.uint<std::uint64_t>(dataset.records.size());
  w.uint<std::uint32_t>(static_cast<std::uint32_t>(dataset.dim));
  w.uint<std::uint32_t>(static_cast<std::uint32_t>(dataset.n_classes));
  for (const SampleRecord& r : dataset.records) {
    w.uint<std::uint64_t>(r.sample_id);
    w.uint<std::uint32_t>(r.label);
    w.f32(static_cast<float>(r.context.lat));
    w.f32(static_cast<float>(r.context.lon));
    w.f32(static_cast<float>(r.context.day));
    w.f32(static_cast<float>(r.context.hour));
    for (double v : r.embedding) {
      w.f64(v);
    }
  }
  write_bytes(path, w.str());
}

Dataset read_dataset(const std::filesystem::path& path) {
  const std::string bytes = read_bytes(path);
  ByteReader r(bytes, "dataset " + path.string());
  r.expect_magic(kDatasetMagic);
  const auto version = r.uint<std::uint16_t>();
  if (version != kDatasetVersion) {
    throw UnsupportedVersion("dataset version " + std::to_string(version) + " not supported");
  }
  const auto n = r.uint<std::uint64_t>();
  const auto dim = r.uint<std::uint32_t>();
  const auto n_classes = r.uint<std::uint32_t>();
  const std::uint64_t record_size = 8 + 4 + 4 * 4 + 8ULL * dim;
  // Size check before allocating so a corrupt header cannot trigger a huge
  // allocation.
  if (n > r.remaining() / record_size) {
    throw TruncatedFile("dataset " + path.string() + ": file is truncated");
  }
  if (n * record_size != r.remaining()) {
    throw MalformedFile("dataset " + path.string() + ": trailing bytes after records");
  }

  Dataset ds;
  ds.n_classes = n_classes;
  ds.dim = dim;
  ds.records.resize(n);
  for (SampleRecord& rec : ds.records) {
    rec.sample_id = r.uint<std::uint64_t>();
    rec.label = r.uint<std::uint32_t>();
    rec.context.lat = r.f32();
    rec.context.lon = r.f32();
    rec.context.day = r.f32();
    rec.context.hour = r.f32();
    rec.embedding.resize(dim);
    for (double& v : rec.embedding) {
      v = r.f64();
    }
  }
  try {
    ds.validate();
    for (const SampleRecord& rec : ds.records) {
      rec.context.validate();
    }
  } catch (const StoreError&) {
    throw;
  } catch (const Error& e) {
    throw MalformedFile("dataset " + path.string() + ": " + e.what());
  }
  return ds;
}

void write_prior_table(const PriorTable& table, const std::filesystem::path& path) {
  ByteWriter w;
  w.bytes(kPriorMagic, 4);
  w.uint<std::uint16_t>(kPriorTableVersion);
  w.uint<std::uint64_t>(table.size());
  w.uint<std::uint32_t>(static_cast<std::uint32_t>(table.n_classes()));
  for (std::size_t i = 0; i < table.size(); ++i) {
    w.uint<std::uint64_t>(table.ids()[i]);
    for (float v : table.raw_row(i)) {
      w.f32(v);
    }
  }
  write_bytes(path, w.str());
}

PriorTable read_prior_table(const std::filesystem::path& path) {
  const std::string bytes = read_bytes(path);
  ByteReader r(bytes, "prior table " + path.string());
  r.expect_magic(kPriorMagic);
  const auto version = r.uint<std::uint16_t>();
  if (version != kPriorTableVersion) {
    throw UnsupportedVersion("prior table version " + std::to_string(version) +
                             " not supported");
  }
  const auto n = r.uint<std::uint64_t>();
  const auto n_classes = r.uint<std::uint32_t>();
  if (n_classes < 2) {
    throw MalformedFile("prior table " + path.string() + ": fewer than 2 classes");
  }
  const std::uint64_t row_size = 8 + 4ULL * n_classes;
  if (n > r.remaining() / row_size) {
    throw TruncatedFile("prior table " + path.string() + ": file is truncated");
  }
  if (n * row_size != r.remaining()) {
    throw MalformedFile("prior table " + path.string() + ": trailing bytes after rows");
  }
  std::vector<std::uint64_t> ids(n);
  std::vector<float> raw(n * n_classes);
  for (std::uint64_t i = 0; i < n; ++i) {
    ids[i] = r.uint<std::uint64_t>();
    for (std::uint32_t c = 0; c < n_classes; ++c) {
      raw[i * n_classes + c] = r.f32();
    }
  }
  return PriorTable(n_classes, std::move(ids), std::move(raw));
}

std::string read_text_file(const std::filesystem::path& path) { return read_bytes(path); }

void write_text_file(const std::filesystem::path& path, const std::string& text) {
  write_bytes(path, text);
}

}  // namespace finch
