#pragma once

#include <stdexcept>

namespace ofb {

class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};
// Operand shapes do not conform to a primitive or a contract.
class ShapeError : public Error {
 public:
  using Error::Error;
};
// Non-finite values or an operand in a singular set.
class NumericError : public Error {
 public:
  using Error::Error;
};
// Operation invalid for the current object state.
class StateError : public Error {
 public:
  using Error::Error;
};
// Invalid user configuration.
class ConfigError : public Error {
 public:
  using Error::Error;
};

}  // namespace ofb
