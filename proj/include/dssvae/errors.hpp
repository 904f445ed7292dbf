// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstddef>
#include <stdexcept>
#include <string>

namespace dssvae {

// Exception hierarchy. Each family maps to one CLI exit code: everything
// derived from InputError exits 1, NumericError exits 2.

class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class InputError : public Error {
 public:
  using Error::Error;
};

class ShapeError : public InputError {
 public:
  using InputError::InputError;
};

class DomainError : public InputError {
 public:
  using InputError::InputError;
};

/// Violated API precondition (non-scalar loss, non-detached latent, ...).
class ContractError : public InputError {
 public:
  using InputError::InputError;
};

class ConfigError : public InputError {
 public:
  using InputError::InputError;
};

class ParseError : public InputError {
 public:
  ParseError(const std::string& what, std::size_t offset)
      : InputError(what + " at byte " + std::to_string(offset)), offset_(offset) {}
  std::size_t offset() const { return offset_; }

 private:
  std::size_t offset_;
};

/// Malformed linearized tree; position is 1-based.
class ValidityError : public InputError {
 public:
  ValidityError(const std::string& what, std::size_t position)
      : InputError(what + " at position " + std::to_string(position)), position_(position) {}
  std::size_t position() const { return position_; }

 private:
  std::size_t position_;
};

class IncompatibleError : public InputError {
 public:
  using InputError::InputError;
};

class CorruptionError : public InputError {
 public:
  using InputError::InputError;
};

/// I/O failures are retryable: the trainer logs them and keeps going.
class IoError : public Error {
 public:
  using Error::Error;
};

class NumericError : public Error {
 public:
  using Error::Error;
};

}  // namespace dssvae
