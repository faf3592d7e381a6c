#pragma once

#include <stdexcept>
#include <string>
#include <string_view>

namespace lsnet {

enum class ErrorCode {
  NotPositiveDefinite,
  DimensionMismatch,
  ShapeMismatch,
  LayoutMismatch,
  NonFiniteEvaluation,
  NonFiniteGradient,
  InvalidSigma,
  InvalidArgument,
  DomainError,
  DegenerateScene,
  VersionMismatch,
  CorruptFile,
  IoError,
};

std::string_view to_string(ErrorCode code);

/// Single exception type for the library; callers branch on code().
class Error : public std::runtime_error {
 public:
  Error(ErrorCode code, const std::string& what)
      : std::runtime_error(std::string(to_string(code)) + ": " + what), code_(code) {}

  ErrorCode code() const noexcept { return code_; }

 private:
  ErrorCode code_;
};

inline std::string_view to_string(ErrorCode code) {
  switch (code) {
    case ErrorCode::NotPositiveDefinite: return "NotPositiveDefinite";
    case ErrorCode::DimensionMismatch: return "DimensionMismatch";
    case ErrorCode::ShapeMismatch: return "ShapeMismatch";
    case ErrorCode::LayoutMismatch: return "LayoutMismatch";
    case ErrorCode::NonFiniteEvaluation: return "NonFiniteEvaluation";
    case ErrorCode::NonFiniteGradient: return "NonFiniteGradient";
    case ErrorCode::InvalidSigma: return "InvalidSigma";
    case ErrorCode::InvalidArgument: return "InvalidArgument";
    case ErrorCode::DomainError: return "DomainError";
    case ErrorCode::DegenerateScene: return "DegenerateScene";
    case ErrorCode::VersionMismatch: return "VersionMismatch";
    case ErrorCode::CorruptFile: return "CorruptFile";
    case ErrorCode::IoError: return "IoError";
  }
  return "Unknown";
}

}  // namespace lsnet
