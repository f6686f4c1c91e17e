#pragma once

#include <stdexcept>
#include <string>

namespace memcap {

class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Incompatible tensor shapes, or a tensor that does not match its declared role.
class ShapeError : public Error {
 public:
  using Error::Error;
};

/// NaN/Inf produced by a kernel, or a non-finite gradient fed to an optimizer.
class NumericError : public Error {
 public:
  using Error::Error;
};

/// Malformed input file or bitstream.
class ParseError : public Error {
 public:
  using Error::Error;
};

class ConfigError : public Error {
 public:
  using Error::Error;
};

class IoError : public Error {
 public:
  using Error::Error;
};

}  // namespace memcap
