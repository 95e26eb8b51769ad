#pragma once

#include <stdexcept>
#include <string>

namespace alora {

// Base class for all library errors.
struct Error : std::runtime_error {
    using std::runtime_error::runtime_error;
};

// Incompatible tensor shapes. Message names both shapes.
struct DimensionError : Error {
    using Error::Error;
};

// Out-of-range index (class targets, token ids, rank indices).
struct IndexError : Error {
    using Error::Error;
};

// Operation not valid in the current object state (re-pruning a dead
// gate, merging twice, stepping a parameter without a gradient).
struct StateError : Error {
    using Error::Error;
};

// Invalid wiring of components (e.g. an attention adapter handed to the
// feed-forward path).
struct ConfigError : Error {
    using Error::Error;
};

// Invalid argument value.
struct ArgumentError : Error {
    using Error::Error;
};

// A runtime invariant was violated. Test-fatal; maps to exit code 3 in
// the CLI.
struct InvariantError : Error {
    using Error::Error;
};

}  // namespace alora
