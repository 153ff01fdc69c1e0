#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

namespace psplat {

/// Process exit codes used by the CLI. Stable across releases.
enum class ExitCode : int {
  Ok = 0,
  Failure = 1,
  MissingArtifact = 2,
  MalformedFile = 3,
  ParameterOutOfRange = 4,
  StaleArtifact = 5,
  MetricBelowBound = 6,
};

class Error : public std::runtime_error {
 public:
  explicit Error(const std::string& what, ExitCode code = ExitCode::Failure)
      : std::runtime_error(what), code_(code) {}
  ExitCode code() const noexcept { return code_; }

 private:
  ExitCode code_;
};

/// Invalid parameter or mismatched dimensions.
class ConfigError : public Error {
 public:
  explicit ConfigError(const std::string& what) : Error(what, ExitCode::ParameterOutOfRange) {}
};

/// A stage precondition that cannot be satisfied by the data (e.g. no overlap).
class PipelineError : public Error {
 public:
  explicit PipelineError(const std::string& what) : Error(what, ExitCode::Failure) {}
};

class MissingArtifactError : public Error {
 public:
  explicit MissingArtifactError(const std::filesystem::path& path)
      : Error("missing artifact: " + path.string(), ExitCode::MissingArtifact), path_(path) {}
  const std::filesystem::path& path() const noexcept { return path_; }

 private:
  std::filesystem::path path_;
};

class FormatError : public Error {
 public:
  FormatError(const std::string& what, std::uint64_t offset)
      : Error(what + " (at byte offset " + std::to_string(offset) + ")", ExitCode::MalformedFile),
        offset_(offset) {}
  std::uint64_t offset() const noexcept { return offset_; }

 private:
  std::uint64_t offset_;
};

class StaleArtifactError : public Error {
 public:
  explicit StaleArtifactError(const std::string& what) : Error(what, ExitCode::StaleArtifact) {}
};

class LookupError : public Error {
 public:
  explicit LookupError(const std::string& what) : Error(what, ExitCode::Failure) {}
};

/// Dense row-major rows x dim float matrix; one feature vector per row.
struct FeatureMatrix {
  std::size_t rows = 0;
  std::size_t dim = 0;
  std::vector<float> data;

  FeatureMatrix() = default;
  FeatureMatrix(std::size_t r, std::size_t d) : rows(r), dim(d), data(r * d, 0.0f) {}

  std::span<float> row(std::size_t i) { return {data.data() + i * dim, dim}; }
  std::span<const float> row(std::size_t i) const { return {data.data() + i * dim, dim}; }
};

double dot(std::span<const float> a, std::span<const float> b);
double dot(std::span<const double> a, std::span<const double> b);
double norm(std::span<const float> a);
double norm(std::span<const double> a);

/// SplitMix64-seeded xoshiro256** generator. Output is identical on every
/// platform, unlike the std distributions.
class Rng {
 public:
  explicit Rng(std::uint64_t seed);

  std::uint64_t next();
  /// Uniform in [0, 1).
  double uniform();
  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }
  /// Uniform integer in [0, n).
  std::uint64_t below(std::uint64_t n);
  double normal();

 private:
  std::uint64_t s_[4];
  bool has_spare_ = false;
  double spare_ = 0.0;
};

/// Deterministically derive an independent stream seed.
std::uint64_t derive_seed(std::uint64_t seed, std::uint64_t stream);

/// 64-bit FNV-1a digest, hex encoded.
std::string digest_bytes(std::span<const std::uint8_t> bytes);
std::string digest_file(const std::filesystem::path& path);

/// Write via a temp file in the same directory followed by rename.
void write_file_atomic(const std::filesystem::path& path, std::span<const std::uint8_t> bytes);
void write_file_atomic(const std::filesystem::path& path, const std::string& text);
std::vector<std::uint8_t> read_file(const std::filesystem::path& path);

/// Little-endian binary writer into an in-memory buffer.
class ByteWriter {
 public:
  void bytes(const void* p, std::size_t n);
  void magic(const char (&m)[5]) { bytes(m, 4); }
  void u8(std::uint8_t v) { bytes(&v, 1); }
  void u16(std::uint16_t v);
  void u32(std::uint32_t v);
  void i32(std::int32_t v) { u32(static_cast<std::uint32_t>(v)); }
  void f32(float v);
  void f64(double v);

  const std::vector<std::uint8_t>& buffer() const { return buf_; }

 private:
  std::vector<std::uint8_t> buf_;
};

/// Little-endian reader; throws FormatError with the failing offset.
class ByteReader {
 public:
  explicit ByteReader(std::span<const std::uint8_t> data) : data_(data) {}

  void expect_magic(const char (&m)[5]);
  std::uint8_t u8();
  std::uint16_t u16();
  std::uint32_t u32();
  std::int32_t i32() { return static_cast<std::int32_t>(u32()); }
  float f32();
  double f64();
  void skip(std::size_t n);

  std::size_t offset() const { return pos_; }
  std::size_t remaining() const { return data_.size() - pos_; }
  void require(std::size_t n, const char* what) const;
  void expect_end() const;

 private:
  std::span<const std::uint8_t> data_;
  std::size_t pos_ = 0;
};

/// Caps OpenMP worker count; 0 keeps the runtime default.
void set_thread_count(int threads);

}  // namespace psplat
