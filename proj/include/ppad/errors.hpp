#pragma once

#include <stdexcept>

namespace ppad {

/// Malformed or missing input data (scene files, manifests, checkpoints).
struct DataError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

/// Non-finite values during training or gradient evaluation.
struct NumericError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

} // namespace ppad
