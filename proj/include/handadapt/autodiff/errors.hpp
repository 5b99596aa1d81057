#pragma once

#include <stdexcept>
#include <string>

namespace handadapt {

// Operand shapes disagree with what a primitive or loss expects.
class ShapeError : public std::invalid_argument {
 public:
  explicit ShapeError(const std::string& what) : std::invalid_argument(what) {}
};

// A NaN or infinity showed up where only finite values are allowed.
class NumericalError : public std::runtime_error {
 public:
  explicit NumericalError(const std::string& what) : std::runtime_error(what) {}
};

// Bad configuration or bad argument value.
class ConfigError : public std::invalid_argument {
 public:
  explicit ConfigError(const std::string& what) : std::invalid_argument(what) {}
};

}  // namespace handadapt
