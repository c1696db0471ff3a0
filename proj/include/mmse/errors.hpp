#pragma once

#include <stdexcept>
#include <string>

namespace mmse {

// Error taxonomy mirrors the CLI exit codes: config/validation -> 1, I/O -> 2.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class ConfigError : public Error {
 public:
  using Error::Error;
};

class ValidationError : public Error {
 public:
  using Error::Error;
};

// Malformed content in an input file (bad JSON line, bad magic, ...).
class ParseError : public ValidationError {
 public:
  using ValidationError::ValidationError;
};

class IoError : public Error {
 public:
  using Error::Error;
};

}  // namespace mmse
