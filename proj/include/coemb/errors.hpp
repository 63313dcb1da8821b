#pragma once

#include <stdexcept>
#include <string>

namespace coemb {

// Base of every error raised by the library. The subclasses map onto the
// command-line exit codes (usage 1, data 2, numeric 3).
class Error : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

// Invalid arguments or configuration supplied by the caller.
class UsageError : public Error {
public:
    using Error::Error;
};

// Malformed or inconsistent input files and label references.
class DataError : public Error {
public:
    using Error::Error;
};

// Non-finite values or numerically degenerate inputs.
class NumericError : public Error {
public:
    using Error::Error;
};

// Shortest-path query whose target is unreachable from its source.
class NoPathError : public Error {
public:
    using Error::Error;
};

} // namespace coemb
