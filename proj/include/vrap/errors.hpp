#pragma once

#include <stdexcept>
#include <string>

namespace vrap {

// Exit-code contract used by the CLI: 1 usage, 2 data/format, 3 numerical.
class UsageError : public std::runtime_error {
 public:
  explicit UsageError(const std::string& msg) : std::runtime_error(msg) {}
};

// Bad files, bad magic bytes, schema/shape mismatches.
class DataError : public std::runtime_error {
 public:
  explicit DataError(const std::string& msg) : std::runtime_error(msg) {}
};

// NaN losses, divergence.
class NumericError : public std::runtime_error {
 public:
  explicit NumericError(const std::string& msg) : std::runtime_error(msg) {}
};

}  // namespace vrap
