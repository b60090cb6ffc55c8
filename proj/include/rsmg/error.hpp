#pragma once

#include <stdexcept>
#include <string>

namespace rsmg {

enum class ErrorCode {
  ShapeMismatch,
  InvalidArg,
  NotScalar,
  DetachedTensor,
  OddExtent,
  ChunkError,
  ContextOverflow,
  BadMagic,
  TruncatedFile,
  GridMismatch,
  VersionMismatch,
  ConfigError,
  DataError,
  EmptyEvalSet,
  IoError,
};

const char* to_string(ErrorCode code);

/// Single exception type for the library; `code()` identifies the failure class.
class Error : public std::runtime_error {
 public:
  Error(ErrorCode code, const std::string& what)
      : std::runtime_error(std::string(to_string(code)) + ": " + what), code_(code) {}

  ErrorCode code() const noexcept { return code_; }

 private:
  ErrorCode code_;
};

inline const char* to_string(ErrorCode code) {
  switch (code) {
    case ErrorCode::ShapeMismatch: return "ShapeMismatch";
    case ErrorCode::InvalidArg: return "InvalidArg";
    case ErrorCode::NotScalar: return "NotScalar";
    case ErrorCode::DetachedTensor: return "DetachedTensor";
    case ErrorCode::OddExtent: return "OddExtent";
    case ErrorCode::ChunkError: return "ChunkError";
    case ErrorCode::ContextOverflow: return "ContextOverflow";
    case ErrorCode::BadMagic: return "BadMagic";
    case ErrorCode::TruncatedFile: return "TruncatedFile";
    case ErrorCode::GridMismatch: return "GridMismatch";
    case ErrorCode::VersionMismatch: return "VersionMismatch";
    case ErrorCode::ConfigError: return "ConfigError";
    case ErrorCode::DataError: return "DataError";
    case ErrorCode::EmptyEvalSet: return "EmptyEvalSet";
    case ErrorCode::IoError: return "IoError";
  }
  return "Unknown";
}

}  // namespace rsmg
