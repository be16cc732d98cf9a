#pragma once

#include <stdexcept>
#include <string>
#include <string_view>

namespace archprobe {

enum class ErrorCode {
  InvalidArgument,
  Calibration,
  InsufficientWork,
  Capability,
  KernelFailure,
  Parse,
  Pinning,
  Io,
  MissingInput,
};

inline std::string_view to_string(ErrorCode code) {
  switch (code) {
    case ErrorCode::InvalidArgument: return "invalid argument";
    case ErrorCode::Calibration: return "calibration failure";
    case ErrorCode::InsufficientWork: return "insufficient work";
    case ErrorCode::Capability: return "unsupported by backend";
    case ErrorCode::KernelFailure: return "kernel failure";
    case ErrorCode::Parse: return "parse error";
    case ErrorCode::Pinning: return "pinning failure";
    case ErrorCode::Io: return "i/o error";
    case ErrorCode::MissingInput: return "missing input";
  }
  return "error";
}

/// Base exception for everything the suite reports. The code lets callers
/// (and the CLI exit-code mapping) branch without parsing messages.
class Error : public std::runtime_error {
 public:
  Error(ErrorCode code, const std::string& message)
      : std::runtime_error(std::string(to_string(code)) + ": " + message), code_(code) {}

  ErrorCode code() const noexcept { return code_; }

 private:
  ErrorCode code_;
};

/// A kernel threw while running under the measurement protocol.
class KernelFailure : public Error {
 public:
  KernelFailure(int pass_index, const std::string& what)
      : Error(ErrorCode::KernelFailure, "pass " + std::to_string(pass_index) + ": " + what),
        pass_index_(pass_index) {}

  int pass_index() const noexcept { return pass_index_; }

 private:
  int pass_index_;
};

/// Parse failure carrying the 1-based line number of the offending entry.
class ParseError : public Error {
 public:
  ParseError(std::size_t line, const std::string& what)
      : Error(ErrorCode::Parse, "line " + std::to_string(line) + ": " + what), line_(line) {}

  std::size_t line() const noexcept { return line_; }

 private:
  std::size_t line_;
};

}  // namespace archprobe
