#pragma once

#include <stdexcept>
#include <string>

namespace hdgt {

// Shape/dimension mismatch between tensors or between a tensor and an op contract.
class ShapeError : public std::invalid_argument {
 public:
  explicit ShapeError(const std::string& msg) : std::invalid_argument(msg) {}
};

// Invalid configuration (bad field value, indivisible sizes, unknown keys). CLI exit code 2.
class ConfigError : public std::runtime_error {
 public:
  explicit ConfigError(const std::string& msg) : std::runtime_error(msg) {}
};

// A required on-disk artifact (scene dir, checkpoint) is absent. CLI exit code 3.
class MissingArtifactError : public std::runtime_error {
 public:
  explicit MissingArtifactError(const std::string& msg) : std::runtime_error(msg) {}
};

// Numerical failure (diverging training loss, non-finite values). CLI exit code 4.
class NumericError : public std::runtime_error {
 public:
  explicit NumericError(const std::string& msg) : std::runtime_error(msg) {}
};

// API misuse (non-scalar loss, reading a gradient off-tape).
class UsageError : public std::logic_error {
 public:
  explicit UsageError(const std::string& msg) : std::logic_error(msg) {}
};

}  // namespace hdgt
