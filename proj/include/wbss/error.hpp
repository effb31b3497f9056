#pragma once

#include <stdexcept>
#include <string>

namespace wbss {

// Error categories. The CLI maps these onto process exit codes.
struct ConfigError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

struct InvalidInputError : std::invalid_argument {
  using std::invalid_argument::invalid_argument;
};

struct ShapeError : std::invalid_argument {
  using std::invalid_argument::invalid_argument;
};

struct PreconditionError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

struct CalibrationError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

struct UndefinedMetricError : std::domain_error {
  using std::domain_error::domain_error;
};

struct IoError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

}  // namespace wbss
