#pragma once

#include <stdexcept>

namespace tcnet {

// Invalid configuration: bad hyperparameters, violated construction constraints.
struct ConfigError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

// Tensor extents incompatible with an operation; message names the offending axis.
struct DimensionError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

// Filesystem / stream failures.
struct IoError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

// Malformed on-disk data: bad magic, version, truncated payload.
struct FormatError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

// Non-finite values where finite ones are required (training divergence, NaN forward).
struct NumericError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

} // namespace tcnet
