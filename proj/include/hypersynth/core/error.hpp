#pragma once

#include <stdexcept>
#include <string>

namespace hypersynth {

// Base of every error raised by the library. The CLI maps the subclasses
// onto process exit codes.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Bad user input: malformed config, invalid arguments, violated preconditions.
class ConfigError : public Error {
 public:
  using Error::Error;
};

// File-level failures: unreadable/unwritable paths, malformed containers,
// checksum mismatch.
class IoError : public Error {
 public:
  using Error::Error;
};

// Solver divergence, non-finite losses, failed chains, degenerate rank.
class NumericalError : public Error {
 public:
  using Error::Error;
};

}  // namespace hypersynth
