#pragma once

#include <cstddef>
#include <stdexcept>
#include <string>

namespace nameprobe {

// Base for every error raised by the library.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Malformed input file. line() is 1-based; 0 when not line-oriented.
class ParseError : public Error {
 public:
  ParseError(const std::string& what, std::size_t line)
      : Error(line ? "line " + std::to_string(line) + ": " + what : what), line_(line) {}
  std::size_t line() const { return line_; }

 private:
  std::size_t line_;
};

// A value violates a documented precondition or invariant.
class ValidationError : public Error {
 public:
  using Error::Error;
};

// Endpoint unreachable, timed out, or returned a retryable status.
class TransportError : public Error {
 public:
  using Error::Error;
};

// Endpoint answered, but the payload does not follow the wire contract.
class ProtocolError : public Error {
 public:
  using Error::Error;
};

// Inconsistent or incomplete run configuration.
class ConfigError : public Error {
 public:
  using Error::Error;
};

}  // namespace nameprobe
