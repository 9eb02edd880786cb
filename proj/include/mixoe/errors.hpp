#pragma once

#include <stdexcept>
#include <string>

namespace mixoe {

// std::invalid_argument is used directly for argument-contract violations.

// Input data violates a contract (missing class, malformed file, ...).
struct DataError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

// The operation cannot be performed on the given representation.
struct UnsupportedOperation : std::runtime_error {
    using std::runtime_error::runtime_error;
};

// Training produced a non-finite loss.
struct DivergenceError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

// Filesystem failure; message carries the offending path.
struct IoError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

} // namespace mixoe
