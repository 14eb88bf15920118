#pragma once

#include <stdexcept>
#include <string>

namespace bcast {

// Shape or dimension disagreement between operands.
struct ShapeError : std::invalid_argument {
    using std::invalid_argument::invalid_argument;
};

// An API precondition was violated (bad argument value, wrong call order).
struct ContractError : std::invalid_argument {
    using std::invalid_argument::invalid_argument;
};

// Math domain violation (log of a non-positive value, sigma <= 0, ...).
struct DomainError : std::domain_error {
    using std::domain_error::domain_error;
};

// Malformed or inconsistent input data; carries file/line context when known.
struct DataError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

// A requested record (customer id, model file, column) does not exist.
struct NotFoundError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

// Invalid run configuration (flags, config file, hyperparameters).
struct ConfigError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

// Training produced a non-finite loss and cannot continue.
struct DivergenceError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

} // namespace bcast
