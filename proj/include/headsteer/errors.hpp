#pragma once

#include <stdexcept>
#include <string>

namespace headsteer {

// Base class for every error the library raises on purpose.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Weights disagree with the declared architecture, or a vector has the wrong
// length for the site it is bound to.
class ShapeError : public Error {
 public:
  using Error::Error;
};

// A NaN or infinity showed up in the forward pass.
class NumericError : public Error {
 public:
  using Error::Error;
};

// Bad user input: config files, CLI flags, persona files, arguments.
class ConfigError : public Error {
 public:
  using Error::Error;
};

// The judge could not produce a score (transport failure, unusable output).
class JudgeError : public Error {
 public:
  using Error::Error;
};

}  // namespace headsteer
