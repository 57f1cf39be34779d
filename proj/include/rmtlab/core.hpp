#pragma once

#include <complex>
#include <cstddef>
#include <stdexcept>
#include <string>

#include <Eigen/Dense>

namespace rmtlab {

using cplx = std::complex<double>;
using CMatrix = Eigen::MatrixXcd;
using CVector = Eigen::VectorXcd;
using Index = Eigen::Index;

inline constexpr cplx I{0.0, 1.0};

/// Base of every error thrown by the library. The CLI maps subclasses onto
/// exit codes, so keep the hierarchy flat.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Invalid ensemble or experiment configuration.
class ConfigError : public Error {
 public:
  using Error::Error;
};

/// Malformed call arguments (dimension mismatch, non-unit probes, ...).
class ArgumentError : public Error {
 public:
  using Error::Error;
};

/// Argument outside the validity region of a formula.
class OutOfRangeError : public Error {
 public:
  using Error::Error;
};

/// A lemma's hypotheses were not met by the supplied data.
class PreconditionError : public Error {
 public:
  using Error::Error;
};

/// Solver or factorization failure.
class NumericalError : public Error {
 public:
  using Error::Error;
};

inline void require(bool cond, const std::string& what) {
  if (!cond) throw ArgumentError(what);
}

}  // namespace rmtlab
