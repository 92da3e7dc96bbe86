#pragma once

#include <stdexcept>
#include <string>

namespace sparsehead {

/// Base class for all library errors.
class Error : public std::runtime_error {
 public:
  explicit Error(const std::string& what) : std::runtime_error(what) {}
};

/// Operand shapes do not line up (matmul inner dims, batch widths, ...).
class DimensionError : public Error {
 public:
  using Error::Error;
};

/// Input outside an operation's mathematical domain (log of nonpositive value).
class DomainError : public Error {
 public:
  using Error::Error;
};

/// Input is degenerate for the requested computation (zero-norm row,
/// duplicate point in a distance ratio, single-class labels).
class DegenerateInputError : public Error {
 public:
  using Error::Error;
};

/// A caller violated an API contract (non-scalar loss, non-symmetric EVD
/// input, too little data).
class ContractError : public Error {
 public:
  using Error::Error;
};

/// Invalid specification or configuration (identity head with m != d,
/// lambda > 0 on an identity head, unknown config keys).
class ConfigError : public Error {
 public:
  using Error::Error;
};

/// Malformed or truncated file contents.
class FormatError : public Error {
 public:
  using Error::Error;
};

/// Numerical failure: non-finite values, divergence, non-convergence.
class NumericError : public Error {
 public:
  using Error::Error;
};

/// A sampled construction cannot satisfy its required assumptions.
class AssumptionError : public Error {
 public:
  using Error::Error;
};

}  // namespace sparsehead
