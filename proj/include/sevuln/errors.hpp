#pragma once

#include <stdexcept>
#include <string>

namespace sevuln {

/// Failure classes. The CLI maps each class onto a fixed exit code.
enum class ErrorClass {
  kParse,        // malformed input, missing file, bad arguments
  kValidation,   // well-formed but inconsistent input
  kRegularity,   // rank-deficient constraints, unobservable, singular KKT
  kConvergence,  // iterative solver did not converge
  kDegenerate,   // all-zero residual/sensitivity input to a score
  kDomain,       // argument outside its mathematical domain
  kShape,        // dimension mismatch
};

class Error : public std::runtime_error {
 public:
  Error(ErrorClass cls, const std::string& what)
      : std::runtime_error(what), cls_(cls) {}
  ErrorClass error_class() const noexcept { return cls_; }

 private:
  ErrorClass cls_;
};

class ParseError : public Error {
 public:
  ParseError(const std::string& what, int line = 0)
      : Error(ErrorClass::kParse,
              line > 0 ? "line " + std::to_string(line) + ": " + what : what),
        line_(line) {}
  int line() const noexcept { return line_; }

 private:
  int line_;
};

class ValidationError : public Error {
 public:
  explicit ValidationError(const std::string& what)
      : Error(ErrorClass::kValidation, what) {}
};

class LookupError : public Error {
 public:
  explicit LookupError(const std::string& what)
      : Error(ErrorClass::kValidation, what) {}
};

class SingularBranchError : public Error {
 public:
  explicit SingularBranchError(const std::string& what)
      : Error(ErrorClass::kValidation, what) {}
};

class DomainError : public Error {
 public:
  explicit DomainError(const std::string& what)
      : Error(ErrorClass::kDomain, what) {}
};

class ShapeError : public Error {
 public:
  explicit ShapeError(const std::string& what)
      : Error(ErrorClass::kShape, what) {}
};

class ConvergenceError : public Error {
 public:
  ConvergenceError(const std::string& what, double last_residual)
      : Error(ErrorClass::kConvergence, what), last_residual_(last_residual) {}
  double last_residual() const noexcept { return last_residual_; }

 private:
  double last_residual_;
};

/// Singular Newton/KKT matrix. Carries the reciprocal condition estimate.
class SingularityError : public Error {
 public:
  SingularityError(const std::string& what, double rcond)
      : Error(ErrorClass::kRegularity, what), rcond_(rcond) {}
  double rcond() const noexcept { return rcond_; }

 private:
  double rcond_;
};

class RegularityError : public Error {
 public:
  explicit RegularityError(const std::string& what)
      : Error(ErrorClass::kRegularity, what) {}
};

class ObservabilityError : public Error {
 public:
  explicit ObservabilityError(const std::string& what)
      : Error(ErrorClass::kRegularity, what) {}
};

/// Sensitivities requested at a point that is not a KKT point.
class StalePointError : public Error {
 public:
  explicit StalePointError(const std::string& what)
      : Error(ErrorClass::kConvergence, what) {}
};

class DegenerateError : public Error {
 public:
  explicit DegenerateError(const std::string& what)
      : Error(ErrorClass::kDegenerate, what) {}
};

}  // namespace sevuln
