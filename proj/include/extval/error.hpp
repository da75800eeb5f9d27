#pragma once

#include <stdexcept>
#include <string>

namespace extval {

/// Base class for every error raised by the library.
class Error : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/// A precondition on an argument was violated.
class InvalidArgument : public Error {
public:
    using Error::Error;
};

/// Vectors that must share a dimension do not.
class DimensionMismatch : public InvalidArgument {
public:
    DimensionMismatch(const std::string& what, std::size_t expected, std::size_t got)
        : InvalidArgument(what + ": expected dimension " + std::to_string(expected) + ", got " +
                          std::to_string(got)) {}
};

/// Estimator output needed by a criterion is absent or unusable.
class MissingEstimate : public Error {
public:
    using Error::Error;
};

/// Input data is malformed; the message names the offending line.
class DataError : public Error {
public:
    using Error::Error;
};

/// Should be unreachable; signals a bug rather than bad input.
class InternalError : public Error {
public:
    using Error::Error;
};

} // namespace extval
