#pragma once

#include <stdexcept>
#include <string>

namespace evoad {

// Bad input: malformed files, invalid configuration, violated preconditions.
// The CLI maps these to exit code 1.
class ValidationError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

class ShapeError : public ValidationError {
public:
    using ValidationError::ValidationError;
};

// Failure while doing the work (diverged training, I/O on output files).
// The CLI maps these to exit code 2.
class RuntimeFailure : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

class TrainingDiverged : public RuntimeFailure {
public:
    using RuntimeFailure::RuntimeFailure;
};

}  // namespace evoad
