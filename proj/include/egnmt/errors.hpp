#pragma once

#include <stdexcept>
#include <string>

namespace egnmt {

// Bad user-supplied data: malformed files, out-of-range values, empty corpora.
class InputError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Tensor dimensions that do not line up.
class ShapeError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

// An API used against its documented preconditions.
class ContractError : public std::logic_error {
 public:
  using std::logic_error::logic_error;
};

// Non-finite values appeared during a computation.
class NumericError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

}  // namespace egnmt
