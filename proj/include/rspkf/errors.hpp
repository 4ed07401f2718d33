#pragma once

#include <stdexcept>
#include <string>

namespace rspkf {

/// Base class for every failure raised by the library.
class Error : public std::runtime_error {
 public:
  explicit Error(const std::string& what) : std::runtime_error(what) {}
};

class NotPositiveDefinite : public Error {
 public:
  using Error::Error;
};

class DimensionMismatch : public Error {
 public:
  using Error::Error;
};

class NoSignChange : public Error {
 public:
  using Error::Error;
};

class MaxIterationsExceeded : public Error {
 public:
  using Error::Error;
};

class ThetaOutOfDomain : public Error {
 public:
  using Error::Error;
};

class ToleranceUnreachable : public Error {
 public:
  using Error::Error;
};

class DegenerateDenominator : public Error {
 public:
  using Error::Error;
};

class NonFiniteDerivative : public Error {
 public:
  using Error::Error;
};

class OmegaSingular : public Error {
 public:
  using Error::Error;
};

class ChainStalled : public Error {
 public:
  using Error::Error;
};

class IoError : public Error {
 public:
  using Error::Error;
};

/// Raised by run_filter when a step fails; carries the step index in the message.
class FilterStepFailed : public Error {
 public:
  FilterStepFailed(int step, const std::string& what)
      : Error("filter step " + std::to_string(step) + ": " + what), step_(step) {}
  int step() const { return step_; }

 private:
  int step_;
};

}  // namespace rspkf
