#pragma once

#include <stdexcept>
#include <string>

namespace deblur {

// Invalid configuration values (CLI exit code 2).
class ConfigError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

// Incompatible tensor/kernel/image shapes.
class DimensionError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// NaN or infinite values where finite ones are required.
class NumericError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Malformed PSF1/CKPT1/CSV/JSONL/PNG input.
class FormatError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class CorruptCheckpointError : public FormatError {
 public:
  using FormatError::FormatError;
};

// Trajectory does not fit the requested kernel raster.
class KernelOverflowError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

}  // namespace deblur
