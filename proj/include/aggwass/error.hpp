#ifndef AGGWASS_ERROR_HPP
#define AGGWASS_ERROR_HPP

#include <stdexcept>
#include <string>

namespace aggwass {

/// Machine-readable failure category carried by every library exception.
enum class ErrorCode {
  invalid_input,
  degenerate_density,
  degenerate_data,
  non_convergence,
  infeasible,
  parse_error,
};

inline const char* to_string(ErrorCode code) {
  switch (code) {
    case ErrorCode::invalid_input:
      return "invalid_input";
    case ErrorCode::degenerate_density:
      return "degenerate_density";
    case ErrorCode::degenerate_data:
      return "degenerate_data";
    case ErrorCode::non_convergence:
      return "non_convergence";
    case ErrorCode::infeasible:
      return "infeasible";
    case ErrorCode::parse_error:
      return "parse_error";
  }
  return "unknown";
}

class Error : public std::runtime_error {
 public:
  Error(ErrorCode code, const std::string& what)
      : std::runtime_error(what), code_(code) {}

  ErrorCode code() const noexcept { return code_; }

 private:
  ErrorCode code_;
};

class InvalidInput : public Error {
 public:
  explicit InvalidInput(const std::string& what)
      : Error(ErrorCode::invalid_input, what) {}
};

/// A density (or anything built on one) was requested from a singular
/// covariance.
class DegenerateDensity : public Error {
 public:
  explicit DegenerateDensity(const std::string& what)
      : Error(ErrorCode::degenerate_density, what) {}
};

class DegenerateData : public Error {
 public:
  explicit DegenerateData(const std::string& what)
      : Error(ErrorCode::degenerate_data, what) {}
};

/// Iterative solver hit its cap. `residual` is the last measured violation.
class NonConvergence : public Error {
 public:
  NonConvergence(const std::string& what, double residual)
      : Error(ErrorCode::non_convergence, what), residual_(residual) {}

  double residual() const noexcept { return residual_; }

 private:
  double residual_;
};

class Infeasible : public Error {
 public:
  explicit Infeasible(const std::string& what)
      : Error(ErrorCode::infeasible, what) {}
};

class ParseError : public Error {
 public:
  explicit ParseError(const std::string& what)
      : Error(ErrorCode::parse_error, what) {}
};

}  // namespace aggwass

#endif
