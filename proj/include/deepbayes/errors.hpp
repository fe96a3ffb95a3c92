#pragma once

#include <stdexcept>
#include <string>

namespace deepbayes {

// Shape or argument mismatch in a tensor operation. Message names the
// operation and the offending shapes.
struct ShapeError : std::invalid_argument {
    using std::invalid_argument::invalid_argument;
};

// Numerical failure (non-finite loss, bad gradient, division by zero in a
// place the caller must know about).
struct NumericError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

// Requested a density statistic from a model that has none (DFX/DBX).
struct DensityUnavailable : std::runtime_error {
    using std::runtime_error::runtime_error;
};

// Malformed configuration file or invalid config values.
struct ConfigError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

// Missing or corrupt on-disk artifact (checkpoint, batch, dataset).
struct ArtifactError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

}  // namespace deepbayes
