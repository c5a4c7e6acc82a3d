#pragma once

#include <cstddef>
#include <cstdint>
#include <map>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

namespace nascore {

using Scalar = double;
using Shape = std::vector<std::size_t>;

enum class ErrorCode {
  kShapeMismatch,
  kNonFiniteInput,
  kUnknownKind,
  kNonScalarLoss,
  kEmptyGraph,
  kInvalidArgument,
  kPairingInfeasible,
  kInvalidGeometry,
  kIo,
  kFormat,
  kMalformedRow,
  kWrongColumnCount,
  kDuplicateVideo,
  kEmptyResult,
  kTooShortClip,
  kIndexOutOfRange,
  kInvalidConfig,
  kStrideExceedsInput,
  kIndivisibleHeads,
  kGeometryMismatch,
  kClassOutOfRange,
  kNonFiniteGradient,
  kEmptySet,
  kDegenerate,
  kIncompatibleRuns,
};

std::string_view to_string(ErrorCode code);

/// Every failure in the library surfaces as an Error carrying a machine-checkable code.
class Error : public std::runtime_error {
 public:
  Error(ErrorCode code, const std::string& what);
  ErrorCode code() const noexcept { return code_; }

 private:
  ErrorCode code_;
};

std::string shape_to_string(const Shape& shape);
std::size_t shape_numel(const Shape& shape);

// Deterministic randomness. Only the raw 64-bit engine output is used so that
// sequences are identical across standard library implementations.

std::uint64_t splitmix64(std::uint64_t x);
std::uint64_t derive_seed(std::uint64_t base, std::uint64_t salt);
std::uint64_t derive_seed(std::uint64_t base, std::string_view salt);

class Rng {
 public:
  explicit Rng(std::uint64_t seed) : state_(seed) {}
  std::uint64_t next();
  /// Uniform in [0, 1).
  Scalar uniform();
  Scalar uniform(Scalar lo, Scalar hi) { return lo + (hi - lo) * uniform(); }
  /// Uniform integer in [0, n).
  std::uint64_t below(std::uint64_t n);
  /// Uniform integer in [lo, hi].
  std::int64_t between(std::int64_t lo, std::int64_t hi);

  template <typename T>
  void shuffle(std::vector<T>& items) {
    for (std::size_t i = items.size(); i > 1; --i) {
      std::size_t j = static_cast<std::size_t>(below(i));
      std::swap(items[i - 1], items[j]);
    }
  }

 private:
  std::uint64_t state_;
};

/// `key=value` lines; blank lines and `#` comments are skipped. Throws
/// kFormat on a line without '=' or a repeated key.
std::map<std::string, std::string> parse_key_values(std::string_view text);
std::string read_text_file(const std::string& path);
/// Replaces the file. Throws kIo.
void write_text_file(const std::string& path, std::string_view content);

/// Hex SHA-256 of a byte string.
std::string sha256_hex(std::string_view bytes);
std::string sha256_file(const std::string& path);

}  // namespace nascore
