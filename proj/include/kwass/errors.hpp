#pragma once

#include <stdexcept>
#include <string>

namespace kwass {

// Base class for every error raised by the library.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Invalid user configuration or schema violation. `path` names the offending field.
class ConfigError : public Error {
 public:
  ConfigError(std::string path, const std::string& what)
      : Error(path.empty() ? what : path + ": " + what), path_(std::move(path)) {}
  const std::string& path() const noexcept { return path_; }

 private:
  std::string path_;
};

// A formula or solver was called outside the region where it is defined.
class DomainError : public Error {
 public:
  using Error::Error;
};

// Implicit equation has no root (e.g. E(t) >= 1 for the logarithmic weight).
class NoRootError : public DomainError {
 public:
  using DomainError::DomainError;
};

// Problem size exceeds the exact solver's cap.
class CapacityError : public Error {
 public:
  using Error::Error;
};

// Malformed coupling: index out of range, negative mass.
class StructuralError : public Error {
 public:
  using Error::Error;
};

// NaN/Inf encountered, or an iterative solver failed to converge.
class NumericalError : public Error {
 public:
  using Error::Error;
};

}  // namespace kwass
