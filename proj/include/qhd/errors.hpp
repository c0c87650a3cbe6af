#pragma once

#include <stdexcept>
#include <string>

namespace qhd {

/// Base class for all qhd errors.
struct Error : std::runtime_error {
    using std::runtime_error::runtime_error;
};

/// Invalid configuration or malformed/mismatched input (CLI exit code 2).
struct ConfigError : Error {
    using Error::Error;
};

/// Numerical failure during a simulation or fit (CLI exit code 3).
struct NumericalError : Error {
    using Error::Error;
};

/// File read/write failure (CLI exit code 4).
struct IoError : Error {
    using Error::Error;
};

/// Two inputs that must share a mesh or time stamp do not.
struct AlignmentError : ConfigError {
    using ConfigError::ConfigError;
};

/// A local fit stencil is rank deficient or numerically singular.
struct DegenerateGeometryError : NumericalError {
    DegenerateGeometryError(const std::string& what, long point_index)
        : NumericalError(what), point(point_index) {}
    long point;  // index of the offending target point, -1 if unknown
};

}  // namespace qhd
