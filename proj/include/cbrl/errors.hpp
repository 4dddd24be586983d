#pragma once

#include <stdexcept>
#include <string>

namespace cbrl {

// Bad user-supplied configuration (CLI exit code 2).
struct ConfigError : std::runtime_error {
  explicit ConfigError(const std::string& what) : std::runtime_error(what) {}
};

// Failure while executing a valid configuration (CLI exit code 3).
struct RunError : std::runtime_error {
  explicit RunError(const std::string& what) : std::runtime_error(what) {}
};

}  // namespace cbrl
