#pragma once

#include <stdexcept>
#include <string>

namespace fleet {

// Shape/dimension mismatches between tensors or geometric inputs.
struct ShapeError : std::invalid_argument {
    using std::invalid_argument::invalid_argument;
};

// A parameter outside its legal range (temperature <= 0, bad ratio, ...).
struct ValueError : std::invalid_argument {
    using std::invalid_argument::invalid_argument;
};

// NaN/Inf surfaced from an operation that was given finite inputs.
struct NumericError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

// File/serialization failures.
struct IoError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

// Self-supervised objective degenerated (teacher output variance collapsed).
struct CollapseError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

}  // namespace fleet
