#pragma once

#include <stdexcept>
#include <string>

namespace nclamp {

// Shapes that do not line up (rows, cols, input/class dims).
class DimensionError : public std::invalid_argument {
public:
    using std::invalid_argument::invalid_argument;
};

// Argument outside the mathematical domain of an operation (T <= 0, M = 0, ...).
class DomainError : public std::domain_error {
public:
    using std::domain_error::domain_error;
};

// Malformed file contents. Messages name the byte offset or field.
class ParseError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

// Well-formed file whose contents violate a structural invariant.
class SchemaError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

// Divergence, non-finite values, or a solver that failed to converge.
class NumericalError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

}  // namespace nclamp
