#pragma once

#include <stdexcept>

namespace calrank {

// Malformed inputs, bad files, violated call preconditions. CLI exit code 1.
class InputError : public std::runtime_error {
public:
  using std::runtime_error::runtime_error;
};

// Non-finite values or broken numerical invariants. CLI exit code 2.
class NumericError : public std::runtime_error {
public:
  using std::runtime_error::runtime_error;
};

}  // namespace calrank
