#pragma once

#include <stdexcept>
#include <string>

namespace fenet {

// Shape disagreement between operands.
struct DimensionError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

// NaN/Inf produced by a forward op, or a loss went non-finite.
struct NumericError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

// Argument outside the mathematical domain (e.g. nonpositive stddev).
struct DomainError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

// Bad or inconsistent configuration.
struct ConfigError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

// API used against its documented contract (e.g. step() after done).
struct ContractError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

// File I/O or format failure.
struct IoError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

} // namespace fenet
