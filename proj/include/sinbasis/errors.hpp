#pragma once

#include <stdexcept>
#include <string>

namespace sinbasis {

/// Shape or extent mismatch between operands.
class DimensionError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

/// Argument outside the mathematical domain of an operation (log of x <= 0, ...).
class DomainError : public std::domain_error {
 public:
  using std::domain_error::domain_error;
};

/// Violated API contract: non-scalar loss, reused graph, unpaired records, ...
class ContractError : public std::logic_error {
 public:
  using std::logic_error::logic_error;
};

/// Training or evaluation produced a non-finite value.
class NumericalError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

}  // namespace sinbasis
