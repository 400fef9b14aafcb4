#pragma once

#include <stdexcept>
#include <string>

namespace mqs {

/// Base class of every error raised by the library.
class Error : public std::runtime_error {
public:
  using std::runtime_error::runtime_error;
};

/// Scenario file could not be parsed or violates a documented invariant.
class ScenarioError : public Error {
public:
  using Error::Error;
};

/// A matrix that must be symmetric positive definite is not.
class NotPositiveDefinite : public Error {
public:
  using Error::Error;
};

class RankDeficient : public Error {
public:
  RankDeficient(const std::string& what, double condition)
      : Error(what), condition_(condition) {}
  double condition() const { return condition_; }

private:
  double condition_;
};

class NewtonDiverged : public Error {
public:
  NewtonDiverged(const std::string& what, int iterations, double residual)
      : Error(what), iterations_(iterations), residual_(residual) {}
  int iterations() const { return iterations_; }
  double residual() const { return residual_; }

private:
  int iterations_;
  double residual_;
};

class SingularLinearSystem : public Error {
public:
  using Error::Error;
};

} // namespace mqs
