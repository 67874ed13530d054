#pragma once

#include <stdexcept>
#include <string>

namespace shwmpc {

class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class DimensionError : public Error {
 public:
  using Error::Error;
};

// A matrix that must be inverted (BNN weight, Jacobian, B_delta) is singular
// or too close to it.
class ConditioningError : public Error {
 public:
  using Error::Error;
};

class SolverError : public Error {
 public:
  SolverError(const std::string& what, double last_residual = 0.0)
      : Error(what), last_residual_(last_residual) {}
  double last_residual() const { return last_residual_; }

 private:
  double last_residual_;
};

class InfeasibleError : public Error {
 public:
  using Error::Error;
};

class TrainingError : public Error {
 public:
  TrainingError(const std::string& what, int epoch)
      : Error(what), epoch_(epoch) {}
  int epoch() const { return epoch_; }

 private:
  int epoch_;
};

class NotRealizableError : public Error {
 public:
  using Error::Error;
};

class ModelUnsuitableError : public Error {
 public:
  ModelUnsuitableError(const std::string& what, double determinant)
      : Error(what), determinant_(determinant) {}
  double determinant() const { return determinant_; }

 private:
  double determinant_;
};

class ConfigError : public Error {
 public:
  using Error::Error;
};

// Plant state blew up under the requested excitation.
class ExcitationRejectedError : public Error {
 public:
  using Error::Error;
};

}  // namespace shwmpc
