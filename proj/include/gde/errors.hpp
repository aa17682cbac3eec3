// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <stdexcept>
#include <string>

namespace gde {

class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Shapes that cannot be combined.
class DimensionError : public Error {
 public:
  using Error::Error;
};

// Caller-supplied data that violates a documented precondition.
class ValidationError : public Error {
 public:
  using Error::Error;
};

// Inputs that are well-formed but would make an operation undefined
// (e.g. an attention row with every key masked).
class ContractError : public Error {
 public:
  using Error::Error;
};

class CapacityError : public Error {
 public:
  using Error::Error;
};

class ConfigError : public Error {
 public:
  using Error::Error;
};

enum class LoadErrorKind { io, magic, version, truncated, checksum, header };

class LoadError : public Error {
 public:
  LoadError(LoadErrorKind kind, const std::string& what) : Error(what), kind_(kind) {}
  LoadErrorKind kind() const noexcept { return kind_; }

 private:
  LoadErrorKind kind_;
};

}  // namespace gde
