#pragma once

#include <stdexcept>
#include <string>

namespace deskpose {

// Malformed configuration or inputs violating a documented precondition.
// The CLI maps this to exit code 2.
class ValidationError : public std::runtime_error {
 public:
  explicit ValidationError(const std::string& what) : std::runtime_error(what) {}
};

// A computation that cannot proceed numerically: degenerate geometry,
// diverging optimization, too few surviving points. CLI exit code 3.
class NumericError : public std::runtime_error {
 public:
  explicit NumericError(const std::string& what) : std::runtime_error(what) {}
};

}  // namespace deskpose
