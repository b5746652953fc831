#pragma once

#include <stdexcept>
#include <string>

namespace emoreg {

// Base class for all library errors.
class Error : public std::runtime_error {
public:
  explicit Error(const std::string& msg) : std::runtime_error(msg) {}
};

// Invalid configuration or command-line usage. CLI exit code 1.
class ConfigError : public Error {
public:
  using Error::Error;
};

// Malformed or inconsistent input data. CLI exit code 2.
class DataError : public Error {
public:
  using Error::Error;
};

// Tensor shape or dimension violations. Treated as data errors at the CLI.
class ShapeError : public Error {
public:
  using Error::Error;
};

// Non-finite values or numerically undefined operations. CLI exit code 3.
class NumericError : public Error {
public:
  using Error::Error;
};

}  // namespace emoreg
