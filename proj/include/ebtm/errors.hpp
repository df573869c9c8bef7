#pragma once

#include <stdexcept>
#include <string>

namespace ebtm {

/// Raised when an argument or configuration violates an operation's contract.
class ValidationError : public std::runtime_error {
 public:
  explicit ValidationError(const std::string& what) : std::runtime_error(what) {}
};

/// Raised for filesystem and network failures.
class IoError : public std::runtime_error {
 public:
  explicit IoError(const std::string& what) : std::runtime_error(what) {}
};

inline void require(bool cond, const std::string& message) {
  if (!cond) throw ValidationError(message);
}

}  // namespace ebtm
