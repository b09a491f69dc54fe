#pragma once

#include <stdexcept>
#include <string>

namespace ncds {

// Invalid configuration, malformed input files or inconsistent dimensions.
class ConfigError : public std::runtime_error {
 public:
  explicit ConfigError(const std::string& what) : std::runtime_error(what) {}
};

// Non-finite values, divergence, or a solver that gave up.
class NumericError : public std::runtime_error {
 public:
  explicit NumericError(const std::string& what) : std::runtime_error(what) {}
};

}  // namespace ncds
