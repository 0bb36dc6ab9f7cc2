#pragma once

#include <stdexcept>
#include <string>

namespace decentbva {

struct Error : std::runtime_error {
    explicit Error(const std::string& msg) : std::runtime_error(msg) {}
};

// Tensor/layer shapes do not compose or do not match an operand.
struct ShapeError : Error {
    using Error::Error;
};

// A config document (or a programmatic config struct) violates a constraint.
struct ConfigError : Error {
    using Error::Error;
};

// Malformed input file (IDX, CSV, checkpoint blob).
struct ParseError : Error {
    using Error::Error;
};

// Non-finite value produced where finiteness is an invariant.
struct NumericError : Error {
    using Error::Error;
};

// Ensemble too small for the requested estimator (MSE variance needs K >= 2).
struct DegenerateEnsembleError : Error {
    using Error::Error;
};

} // namespace decentbva
