#pragma once

#include <stdexcept>
#include <string>

namespace interlock {

// Base class for all library errors.
struct Error : std::runtime_error {
    using std::runtime_error::runtime_error;
};

// Tensor shape / dimension mismatches.
struct ShapeError : Error {
    using Error::Error;
};

// Invalid run configuration (bad strategy name, invalid depth, ...).
// The CLI maps these to exit code 2.
struct ConfigError : Error {
    using Error::Error;
};

// Malformed data files or out-of-range targets.
struct DataError : Error {
    using Error::Error;
};

// Non-finite gradients or parameters during optimization.
struct NumericError : Error {
    using Error::Error;
};

// Broken internal invariants (simulator deadlock, worker protocol violation).
struct InternalError : Error {
    using Error::Error;
};

// A training run aborted mid-flight (worker death); partial metrics were flushed.
struct RunAborted : Error {
    using Error::Error;
};

}  // namespace interlock
