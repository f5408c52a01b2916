#pragma once

#include <stdexcept>
#include <string>

namespace tropeforge {

/// Input data violates a documented schema or invariant (exit code 3 in the CLI).
class ValidationError : public std::runtime_error {
 public:
  explicit ValidationError(const std::string& what) : std::runtime_error(what) {}
};

/// Filesystem problem: missing file, unreadable path, failed write.
class IoError : public std::runtime_error {
 public:
  explicit IoError(const std::string& what) : std::runtime_error(what) {}
};

/// An upstream inference endpoint failed past the retry budget (exit code 4 in the CLI).
class GatewayError : public std::runtime_error {
 public:
  explicit GatewayError(const std::string& what) : std::runtime_error(what) {}
};

}  // namespace tropeforge
