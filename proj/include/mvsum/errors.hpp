#pragma once

#include <stdexcept>
#include <string>

namespace mvsum {

// Invalid argument outside the mathematical domain of an operation
// (non-divisor order, boundary parameter, infeasible order, ...).
class DomainError : public std::domain_error {
public:
  using std::domain_error::domain_error;
};

class RangeError : public std::out_of_range {
public:
  using std::out_of_range::out_of_range;
};

// Maps to CLI exit code 2.
class ConfigError : public std::runtime_error {
public:
  using std::runtime_error::runtime_error;
};

// Maps to CLI exit code 3.
class DataError : public std::runtime_error {
public:
  using std::runtime_error::runtime_error;
};

// Maps to CLI exit code 4.
class InvariantError : public std::logic_error {
public:
  using std::logic_error::logic_error;
};

class IoError : public std::runtime_error {
public:
  using std::runtime_error::runtime_error;
};

} // namespace mvsum
