#pragma once

#include <cmath>
#include <cstdint>
#include <stdexcept>
#include <string>

namespace dxf {

struct Error : std::runtime_error {
    using std::runtime_error::runtime_error;
};

// Shape/dimension violations (mismatched extents, bad axes).
struct ShapeError : Error {
    using Error::Error;
};

// Invalid configuration values (window index out of range, even kernel, ...).
struct ConfigError : Error {
    using Error::Error;
};

// Malformed or inconsistent data (unknown label, bad file contents).
struct DataError : Error {
    using Error::Error;
};

// Filesystem / serialization failures.
struct IoError : Error {
    using Error::Error;
};

// Failures during optimization (non-finite gradients).
struct TrainError : Error {
    using Error::Error;
};

inline bool is_finite(double v) { return std::isfinite(v); }

}  // namespace dxf
