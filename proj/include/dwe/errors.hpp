#pragma once

#include <stdexcept>
#include <string>
#include <vector>

namespace dwe {

class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Incompatible tensor shapes.
class DimensionError : public Error {
 public:
  using Error::Error;
};

// Attention over a context with zero rows.
class EmptyContextError : public DimensionError {
 public:
  using DimensionError::DimensionError;
};

// Malformed or inconsistent dataset content.
class DataError : public Error {
 public:
  using Error::Error;
};

class ConfigError : public Error {
 public:
  using Error::Error;
};

class UsageError : public Error {
 public:
  using Error::Error;
};

// NaN/Inf during training or a failed numeric check.
class NumericError : public Error {
 public:
  using Error::Error;
};

// Checkpoint magic/version/hash mismatch or truncation.
class CorruptionError : public Error {
 public:
  using Error::Error;
};

// Non-fatal conditions the engine recovers from (zero-norm cosine, missing
// gradient, empty negative list, ...). Per thread, append-only until cleared.
inline std::vector<std::string>& warning_log() {
  thread_local std::vector<std::string> log;
  return log;
}

inline void warn(std::string message) { warning_log().push_back(std::move(message)); }

inline void clear_warnings() { warning_log().clear(); }

}  // namespace dwe
