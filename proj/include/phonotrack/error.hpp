#pragma once

#include <stdexcept>
#include <string>

namespace phonotrack {

// Bad input: malformed files, violated preconditions, invalid configuration.
// The CLI maps this to exit code 1.
class ValidationError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

// Failure while running a well-formed request (IO, numerical breakdown).
// The CLI maps this to exit code 2.
class RuntimeError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

}  // namespace phonotrack
