#pragma once

#include <stdexcept>
#include <string>

namespace dbsde {

/// Malformed specification of a network, grid, sampler or problem.
class InvalidSpec : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

/// A numerical procedure produced a non-finite value or failed to converge.
class NumericalError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

}  // namespace dbsde
