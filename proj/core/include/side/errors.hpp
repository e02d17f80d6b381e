#pragma once

#include <cstddef>
#include <stdexcept>
#include <string>

namespace side {

// Tensor extent / wiring mismatches (matmul inner dims, channel counts, ...).
class ShapeError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

// Pointwise math outside an op's domain (log of a non-positive value, ...).
class DomainError : public std::domain_error {
 public:
  using std::domain_error::domain_error;
};

// Invalid configuration values or unknown config keys.
class ConfigError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

// Missing files, malformed datasets, checkpoint manifest mismatches.
class DataError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Malformed file contents; carries the byte offset of the failure.
class ParseError : public DataError {
 public:
  ParseError(const std::string& message, std::size_t offset)
      : DataError(message + " at offset " + std::to_string(offset)),
        offset_(offset) {}

  std::size_t offset() const { return offset_; }

 private:
  std::size_t offset_;
};

// NaN gradients, failed gradient checks.
class NumericError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

}  // namespace side
