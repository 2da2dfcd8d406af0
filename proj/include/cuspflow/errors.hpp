#pragma once

#include <stdexcept>
#include <string>

namespace cuspflow {

/// Argument outside the domain of a geometric or statistical operation.
class DomainError : public std::domain_error {
 public:
  using std::domain_error::domain_error;
};

/// Adaptive step controller could not meet the requested tolerance.
class StepFailure : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Trajectory reached the singular floor of the metric.
class SingularityError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Excursion failed to return to its entry level in the allotted time.
class NonReturnError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Not enough data (samples, grid points, checkpoints) for a fit or check.
class InsufficientDataError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

/// Invalid experiment or model configuration.
class ConfigError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

}  // namespace cuspflow
