#pragma once

#include <stdexcept>
#include <string>

namespace rest {

// Base of every error the library throws.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Tensor extents disagree with what an operation or layer expects.
class ShapeError : public Error {
 public:
  using Error::Error;
};

// Invalid arguments, configuration values or network specifications.
class ConfigError : public Error {
 public:
  using Error::Error;
};

// Malformed or unreadable files (datasets, checkpoints, CSV fixtures).
class FormatError : public Error {
 public:
  using Error::Error;
};

// Non-finite values encountered during training or attack generation.
class NumericalError : public Error {
 public:
  using Error::Error;
};

}  // namespace rest
