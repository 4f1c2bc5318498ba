#pragma once

#include <stdexcept>
#include <string>

namespace odpscreen {

// Bad user input: malformed files, inconsistent schema, out-of-range
// parameters. The CLI maps this to exit status 2.
class ValidationError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

// Numerical failure during a run (non-convergence, NaN). Exit status 1.
class NumericalError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

}  // namespace odpscreen
