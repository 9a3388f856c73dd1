#pragma once

#include <stdexcept>
#include <string>

namespace emmil {

// User-facing misuse: bad shapes, bad config values, malformed files.
class ConfigError : public std::runtime_error {
 public:
  explicit ConfigError(const std::string& what) : std::runtime_error(what) {}
};

// A library invariant was violated; indicates a bug, not user error.
class InternalError : public std::runtime_error {
 public:
  explicit InternalError(const std::string& what) : std::runtime_error(what) {}
};

}  // namespace emmil
