#pragma once

#include <cstdint>
#include <optional>
#include <stdexcept>
#include <string>
#include <string_view>

namespace kgrag {

enum class Errc {
  MalformedRecord,
  EmptyField,
  DimensionMismatch,
  DuplicateId,
  ZeroVector,
  NonFiniteValue,
  InsufficientVectors,
  CorruptFile,
  ShapeMismatch,
  NonFiniteInput,
  OutOfRangeScore,
  DegenerateLabels,
  NoQualifyingPathology,
  UnresolvedHitId,
  BackendTimeout,
  BackendUnavailable,
  BackendRefusal,
  EmptyCorpus,
  EmptyAfterFilter,
  MissingImageIndex,
  IdMismatch,
  InvalidConfig,
  InvalidArgument,
  Io,
};

constexpr std::string_view errc_name(Errc c) noexcept {
  switch (c) {
    case Errc::MalformedRecord: return "MALFORMED_RECORD";
    case Errc::EmptyField: return "EMPTY_FIELD";
    case Errc::DimensionMismatch: return "DIM_MISMATCH";
    case Errc::DuplicateId: return "DUPLICATE_ID";
    case Errc::ZeroVector: return "ZERO_VECTOR";
    case Errc::NonFiniteValue: return "NON_FINITE_VALUE";
    case Errc::InsufficientVectors: return "INSUFFICIENT_VECTORS";
    case Errc::CorruptFile: return "CORRUPT_FILE";
    case Errc::ShapeMismatch: return "SHAPE_MISMATCH";
    case Errc::NonFiniteInput: return "NON_FINITE_INPUT";
    case Errc::OutOfRangeScore: return "OUT_OF_RANGE_SCORE";
    case Errc::DegenerateLabels: return "DEGENERATE_LABELS";
    case Errc::NoQualifyingPathology: return "NO_QUALIFYING_PATHOLOGY";
    case Errc::UnresolvedHitId: return "UNRESOLVED_HIT_ID";
    case Errc::BackendTimeout: return "BACKEND_TIMEOUT";
    case Errc::BackendUnavailable: return "BACKEND_UNAVAILABLE";
    case Errc::BackendRefusal: return "BACKEND_REFUSAL";
    case Errc::EmptyCorpus: return "EMPTY_CORPUS";
    case Errc::EmptyAfterFilter: return "EMPTY_AFTER_FILTER";
    case Errc::MissingImageIndex: return "MISSING_IMAGE_INDEX";
    case Errc::IdMismatch: return "ID_MISMATCH";
    case Errc::InvalidConfig: return "INVALID_CONFIG";
    case Errc::InvalidArgument: return "INVALID_ARGUMENT";
    case Errc::Io: return "IO_ERROR";
  }
  return "UNKNOWN";
}

/// Single exception type for the engine. `code()` is machine-readable;
/// `line()` / `offset()` locate the failure in the offending input when known.
class Error : public std::runtime_error {
 public:
  Error(Errc code, const std::string& what, std::optional<std::uint64_t> line = std::nullopt,
        std::optional<std::uint64_t> offset = std::nullopt)
      : std::runtime_error(format(code, what, line, offset)), code_(code), line_(line), offset_(offset) {}

  Errc code() const noexcept { return code_; }
  std::optional<std::uint64_t> line() const noexcept { return line_; }
  std::optional<std::uint64_t> offset() const noexcept { return offset_; }

 private:
  static std::string format(Errc code, const std::string& what, std::optional<std::uint64_t> line,
                            std::optional<std::uint64_t> offset) {
    std::string s(errc_name(code));
    if (line) s += " (line " + std::to_string(*line) + ")";
    if (offset) s += " (offset " + std::to_string(*offset) + ")";
    s += ": ";
    s += what;
    return s;
  }

  Errc code_;
  std::optional<std::uint64_t> line_;
  std::optional<std::uint64_t> offset_;
};

}  // namespace kgrag
