#pragma once

#include <cstddef>
#include <stdexcept>
#include <string>

namespace lvmoe {

// Root of every error thrown by the library.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Malformed caller input: wrong shapes, non-finite values, bad labels.
class InputError : public Error {
 public:
  using Error::Error;
};

// A model parameter outside its domain, e.g. a non-positive scale.
class ParameterError : public Error {
 public:
  using Error::Error;
};

class NumericalError : public Error {
 public:
  using Error::Error;
};

// A multinomial-logit class with (numerically) zero total weight.
class DegenerateClassError : public NumericalError {
 public:
  DegenerateClassError(std::size_t cls, double mass)
      : NumericalError("degenerate class " + std::to_string(cls) +
                       ": total weight " + std::to_string(mass)),
        cls_(cls) {}
  std::size_t cls() const noexcept { return cls_; }

 private:
  std::size_t cls_;
};

// A mixture component whose responsibility mass vanished during EM.
class CollapsedComponentError : public NumericalError {
 public:
  CollapsedComponentError(std::size_t component, double mass)
      : NumericalError("collapsed component " + std::to_string(component) +
                       ": responsibility mass " + std::to_string(mass)),
        component_(component) {}
  std::size_t component() const noexcept { return component_; }

 private:
  std::size_t component_;
};

class FitFailure : public Error {
 public:
  using Error::Error;
};

class PositivityError : public Error {
 public:
  PositivityError(std::size_t unit, double denom)
      : Error("positivity violation at unit " + std::to_string(unit) +
              ": propensity " + std::to_string(denom)),
        unit_(unit) {}
  std::size_t unit() const noexcept { return unit_; }

 private:
  std::size_t unit_;
};

class LookupError : public Error {
 public:
  using Error::Error;
};

class BootstrapFailure : public Error {
 public:
  using Error::Error;
};

// Ingestion or config parse failure; line is 1-based, 0 when not applicable.
class ParseError : public Error {
 public:
  ParseError(const std::string& what, std::size_t line = 0)
      : Error(line ? what + " (line " + std::to_string(line) + ")" : what),
        line_(line) {}
  std::size_t line() const noexcept { return line_; }

 private:
  std::size_t line_;
};

class IoError : public Error {
 public:
  using Error::Error;
};

}  // namespace lvmoe
