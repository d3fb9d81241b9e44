#pragma once

#include <stdexcept>
#include <string>

namespace madmil {

class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Operand shapes do not line up.
class DimensionError : public Error {
 public:
  using Error::Error;
};

// A bag (or instance-axis reduction) with zero rows.
class EmptyBagError : public Error {
 public:
  using Error::Error;
};

// Malformed input files: IDX headers, CSV manifests, bag files, params.
class FormatError : public Error {
 public:
  using Error::Error;
};

// Invalid experiment or model configuration.
class ConfigError : public Error {
 public:
  using Error::Error;
};

// Non-finite loss during training, or a metric that is undefined for the input.
class NumericalError : public Error {
 public:
  using Error::Error;
};

}  // namespace madmil
