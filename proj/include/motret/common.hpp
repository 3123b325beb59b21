#pragma once

#include <stdexcept>
#include <string>

namespace motret {

// Malformed or inconsistent input data (manifests, tensors, checkpoints, ...).
class DataError : public std::runtime_error {
 public:
  explicit DataError(const std::string& what) : std::runtime_error(what) {}
};

// Numerical failure: NaN/Inf in activations or losses, failed gradient check.
class NumericError : public std::runtime_error {
 public:
  explicit NumericError(const std::string& what) : std::runtime_error(what) {}
};

// Bad command-line / config usage.
class UsageError : public std::runtime_error {
 public:
  explicit UsageError(const std::string& what) : std::runtime_error(what) {}
};

inline void check_data(bool cond, const std::string& msg) {
  if (!cond) throw DataError(msg);
}

inline void check_numeric(bool cond, const std::string& msg) {
  if (!cond) throw NumericError(msg);
}

}  // namespace motret
