#pragma once

#include <stdexcept>
#include <string>

namespace stdf {

// Shape/dimension mismatches between tensors.
struct ShapeError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

// Invalid configuration values (bad kernel width, unknown mode, bad ratios, ...).
struct ConfigError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

// Out-of-range lookups (vocabulary rows, diffusion steps, horizons).
struct IndexError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

// Ingestion / insufficient data problems.
struct DataError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

// Corrupt or truncated files.
struct IntegrityError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

// Metric undefined on the given inputs (e.g. MAPE with no valid targets).
struct MetricError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

// API misuse (non-scalar loss, hash mismatch, missing bundle).
struct UsageError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

}  // namespace stdf
