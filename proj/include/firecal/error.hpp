#pragma once

#include <cstddef>
#include <stdexcept>
#include <string>

namespace firecal {

/// Base of every error thrown by the library.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Argument outside the domain where a function is defined.
class DomainError : public Error {
 public:
  using Error::Error;
};

/// Nonlinear iteration of the heat solver failed to converge.
class SolverError : public Error {
 public:
  SolverError(std::size_t step, double residual, const std::string& what)
      : Error(what), step_(step), residual_(residual) {}

  std::size_t step() const noexcept { return step_; }
  double residual() const noexcept { return residual_; }

 private:
  std::size_t step_;
  double residual_;
};

/// Least-squares fit could not be computed (rank deficiency, too few points).
class FitError : public Error {
 public:
  using Error::Error;
};

/// Bad or incomplete configuration / input file.
class ConfigError : public Error {
 public:
  using Error::Error;
};

/// Surrogate accuracy gate was not met.
class GateError : public Error {
 public:
  GateError(double eta, double threshold, const std::string& what)
      : Error(what), eta_(eta), threshold_(threshold) {}

  double eta() const noexcept { return eta_; }
  double threshold() const noexcept { return threshold_; }

 private:
  double eta_;
  double threshold_;
};

/// MCMC sampler failure (no finite start point, stuck ensemble, target failure).
class SamplerError : public Error {
 public:
  using Error::Error;
};

}  // namespace firecal
