#pragma once

#include <stdexcept>

namespace mhtn {

// Bad shapes, malformed files, digest mismatches.
struct ConfigError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// API misuse: non-scalar backward roots, out-of-range labels, unknown tags.
struct UsageError : std::invalid_argument {
  using std::invalid_argument::invalid_argument;
};

// Non-finite values where finite ones are required.
struct NumericError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

}  // namespace mhtn
