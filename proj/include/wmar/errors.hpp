#pragma once

#include <stdexcept>
#include <string>

namespace wmar {

// Invalid configuration (bad key, bad value, inconsistent schema). Maps to
// process exit code 2 at the CLI boundary.
class ConfigError : public std::runtime_error {
 public:
  explicit ConfigError(const std::string& msg) : std::runtime_error(msg) {}
};

// Anything that goes wrong after configuration was accepted: I/O failures,
// corrupt checkpoints, numerical blow-ups. Maps to exit code 1.
class RuntimeError : public std::runtime_error {
 public:
  explicit RuntimeError(const std::string& msg) : std::runtime_error(msg) {}
};

// Non-finite value produced where finite math was required.
class NumericsError : public RuntimeError {
 public:
  explicit NumericsError(const std::string& msg) : RuntimeError(msg) {}
};

}  // namespace wmar
