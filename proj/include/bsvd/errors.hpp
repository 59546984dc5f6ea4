#pragma once

#include <stdexcept>
#include <string>

namespace bsvd {

/// Bad argument or violated precondition.
class ArgumentError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

/// A caller-supplied object does not satisfy the contract of an operation
/// (for example a basis whose columns are not orthonormal).
class ContractError : public std::logic_error {
 public:
  using std::logic_error::logic_error;
};

/// Numerical failure: non-convergence, non-finite state, degenerate input.
class NumericalError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// A series could not be certified within the requested tolerance before
/// reaching the order cap.
class TruncationError : public NumericalError {
 public:
  TruncationError(const std::string& what, double achieved_bound, int order)
      : NumericalError(what), achieved_bound_(achieved_bound), order_(order) {}

  double achieved_bound() const noexcept { return achieved_bound_; }
  int order() const noexcept { return order_; }

 private:
  double achieved_bound_;
  int order_;
};

/// A rejection loop exceeded its proposal budget.
class SamplerError : public NumericalError {
 public:
  using NumericalError::NumericalError;
};

/// A chain with no variability where a diagnostic needs some.
class DegenerateChainError : public NumericalError {
 public:
  using NumericalError::NumericalError;
};

/// Malformed input file.
class ParseError : public std::runtime_error {
 public:
  ParseError(const std::string& what, long line)
      : std::runtime_error(what + " (line " + std::to_string(line) + ")"), line_(line) {}

  long line() const noexcept { return line_; }

 private:
  long line_;
};

/// A file could not be opened, read or written.
class IoError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

}  // namespace bsvd
