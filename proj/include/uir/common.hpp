#pragma once

#include <cmath>
#include <cstddef>
#include <cstdint>
#include <span>
#include <stdexcept>
#include <string>

namespace uir {

inline constexpr const char* kVersion = "0.1.0";

// Error hierarchy. Every failure raised by this library derives from Error so
// callers can distinguish library faults from everything else.
struct Error : std::runtime_error {
    using std::runtime_error::runtime_error;
};

// Shape/arity violations: empty inputs, mismatched lengths.
struct DimensionError : Error {
    using Error::Error;
};

// Numerically meaningless inputs: zero vectors where a direction is required.
struct DegenerateInputError : Error {
    using Error::Error;
};

// Class/row index out of range.
struct IndexError : Error {
    using Error::Error;
};

// Parameter outside its documented domain.
struct InvalidArgument : Error {
    using Error::Error;
};

// Malformed file contents.
struct FormatError : Error {
    using Error::Error;
};

// File carries an unsupported format version.
struct VersionError : Error {
    using Error::Error;
};

// Filesystem-level failures (missing file, short read/write).
struct IoError : Error {
    using Error::Error;
};

inline void require(bool cond, const char* msg) {
    if (!cond) throw InvalidArgument(msg);
}

inline void require_finite(std::span<const double> xs, const std::string& what) {
    for (double x : xs) {
        if (!std::isfinite(x)) throw InvalidArgument(what + ": non-finite element");
    }
}

}  // namespace uir
