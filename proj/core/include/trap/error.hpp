// Copyright (C) 2025 TRAP Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <stdexcept>
#include <string>

namespace trap {

/// Base class for all framework errors.
struct Error : std::runtime_error {
    using std::runtime_error::runtime_error;
};

/// A required backend (embedder, decoder, perceptual metric, ...) is not
/// configured or cannot be reached.
struct BackendUnavailableError : Error {
    using Error::Error;
};

/// Vector / tensor dimensions do not match the declared contract.
struct ShapeMismatchError : Error {
    using Error::Error;
};

/// A remote adapter failed after exhausting its configured retries.
struct AdapterError : Error {
    using Error::Error;
};

/// File or serialization problem.
struct IoError : Error {
    using Error::Error;
};

}  // namespace trap
