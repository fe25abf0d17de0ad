#pragma once

#include <cstddef>
#include <stdexcept>
#include <string>

namespace unimot {

// Error taxonomy mirrors the CLI exit codes: config/contract -> 2,
// numeric -> 3, checkpoint -> 4, grammar -> 5.

struct ConfigError : std::runtime_error {
  explicit ConfigError(const std::string& m) : std::runtime_error(m) {}
};

struct NumericError : std::runtime_error {
  explicit NumericError(const std::string& m) : std::runtime_error(m) {}
};

struct CheckpointError : std::runtime_error {
  explicit CheckpointError(const std::string& m) : std::runtime_error(m) {}
};

struct GrammarError : std::runtime_error {
  GrammarError(const std::string& m, size_t pos)
      : std::runtime_error(m + " at position " + std::to_string(pos)),
        position(pos) {}
  size_t position;
};

}  // namespace unimot
