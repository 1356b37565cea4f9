#pragma once

#include <stdexcept>
#include <string>

namespace pepnet {

// Base class for every error thrown by this library.
struct Error : std::runtime_error {
    using std::runtime_error::runtime_error;
};

// Malformed text input; carries the 1-based line number when known.
struct ParseError : Error {
    ParseError(const std::string& msg, long line = -1)
        : Error(line >= 0 ? "line " + std::to_string(line) + ": " + msg : msg), line_number(line) {}
    long line_number;
};

// Coordinates outside the sensor, indices outside a container.
struct BoundsError : Error {
    using Error::Error;
};

// Incompatible tensor shapes; the message names both shapes.
struct ShapeError : Error {
    using Error::Error;
};

// A window that cannot be associated with any pose within tolerance.
struct UnlabeledWindowError : Error {
    using Error::Error;
};

}  // namespace pepnet
