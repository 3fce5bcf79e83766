#pragma once

#include <stdexcept>
#include <string>

namespace dbk {

/// Base class for every error deblurkit raises on purpose.
struct Error : std::runtime_error {
    using std::runtime_error::runtime_error;
};

/// Invalid configuration: bad channel counts, malformed config files,
/// incompatible checkpoints. Maps to CLI exit code 2.
struct ConfigError : Error {
    using Error::Error;
};

/// A precondition on runtime data was violated (shape mismatch, values out
/// of the declared range, non-finite input).
struct ContractError : Error {
    using Error::Error;
};

/// Filesystem or codec failure.
struct IoError : Error {
    using Error::Error;
};

/// A required external artifact (feature-extractor weights, detector
/// executable) is missing. The message says how to provide it.
struct DependencyError : Error {
    using Error::Error;
};

/// Training produced a non-finite loss; the message references the last
/// good checkpoint when one exists.
struct DivergenceError : Error {
    using Error::Error;
};

} // namespace dbk
