#pragma once

#include <stdexcept>
#include <string>
#include <string_view>

namespace mtkd {

enum class ErrorCode {
  ZeroVector,
  DimensionMismatch,
  NonPositiveTemperature,
  NotADistribution,
  NotUnitNorm,
  ShapeMismatch,
  TapeReused,
  LabelOutOfRange,
  EmptyBank,
  InvalidSimplex,
  NonPositiveRatio,
  EmptyGradientSet,
  TooManyTeachers,
  InvalidGrid,
  InvalidConfig,
  InvalidSpec,
  IoError,
  FormatVersionMismatch,
  ChecksumMismatch,
  StrategyTeacherMismatch,
  ConfigParseError,
  DataError,
  NumericError,
  NoRunsFound,
};

std::string_view to_string(ErrorCode code);

// Single exception type for the library; callers branch on code().
class Error : public std::runtime_error {
 public:
  Error(ErrorCode code, const std::string& message)
      : std::runtime_error(std::string(to_string(code)) + ": " + message), code_(code) {}

  ErrorCode code() const noexcept { return code_; }

 private:
  ErrorCode code_;
};

[[noreturn]] inline void fail(ErrorCode code, const std::string& message) { throw Error(code, message); }

inline void require(bool condition, ErrorCode code, const std::string& message) {
  if (!condition) fail(code, message);
}

}  // namespace mtkd
