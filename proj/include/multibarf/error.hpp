#pragma once

#include <stdexcept>
#include <string>
#include <string_view>

namespace mbarf {

enum class ErrorKind {
  kInvalidArgument,
  kChartBoundary,
  kAlignmentDegenerate,
  kEmptyDomain,
  kDiverged,
  kCameraInside,
  kUnknownPreset,
  kIo,
  kFormat,
  kVersionMismatch,
};

std::string_view to_string(ErrorKind kind);

// Every failure raised by the library carries a kind so callers (and the CLI)
// can report it in one machine-parsable line.
class Error : public std::runtime_error {
 public:
  Error(ErrorKind kind, const std::string& message)
      : std::runtime_error(message), kind_(kind) {}

  ErrorKind kind() const noexcept { return kind_; }

 private:
  ErrorKind kind_;
};

// Thrown when training produces a non-finite loss.
class DivergedError : public Error {
 public:
  DivergedError(long iteration, const std::string& message)
      : Error(ErrorKind::kDiverged, message), iteration_(iteration) {}

  long iteration() const noexcept { return iteration_; }

 private:
  long iteration_;
};

[[noreturn]] inline void fail(ErrorKind kind, const std::string& message) {
  throw Error(kind, message);
}

inline void require(bool condition, const std::string& message) {
  if (!condition) fail(ErrorKind::kInvalidArgument, message);
}

}  // namespace mbarf
