#pragma once

#include <stdexcept>
#include <string>

namespace dmqn {

struct Error : std::runtime_error {
    using std::runtime_error::runtime_error;
};

/// Shapes that cannot be combined by an operation.
struct DimensionError : Error {
    using Error::Error;
};

/// A caller broke an operation's precondition (non-scalar loss, tau <= 0, ...).
struct ContractError : Error {
    using Error::Error;
};

/// Bad input data: unknown enum strings, too many malformed lines, invalid specs.
struct IngestionError : Error {
    using Error::Error;
};

/// Cache or checkpoint file is unreadable, truncated or fails its checksum.
struct StoreError : Error {
    using Error::Error;
};

/// Malformed scoring request.
struct ProtocolError : Error {
    using Error::Error;
};

/// Training diverged or another numeric failure was detected.
struct NumericError : Error {
    using Error::Error;
};

/// Metric undefined for the input (e.g. AUC over a single class).
struct MetricError : Error {
    using Error::Error;
};

/// Config file missing, unparsable, with unknown keys or invalid values.
struct ConfigError : Error {
    using Error::Error;
};

}  // namespace dmqn
