#pragma once

#include <stdexcept>
#include <string>

namespace ccvm {

/// Malformed or inconsistent input (files, schemas, argument ranges).
class InputError : public std::runtime_error {
 public:
  explicit InputError(const std::string& what) : std::runtime_error(what) {}
};

/// A numerical routine could not produce a trustworthy result
/// (non-factorizable covariance, non-convergence, non-PD Hessian).
class NumericalError : public std::runtime_error {
 public:
  explicit NumericalError(const std::string& what) : std::runtime_error(what) {}
};

/// Too many members of a batch (simulation batches, response draws) failed.
class BatchFailure : public std::runtime_error {
 public:
  explicit BatchFailure(const std::string& what) : std::runtime_error(what) {}
};

}  // namespace ccvm
