#pragma once

#include <stdexcept>
#include <string>

namespace xl {

// Invalid configuration or registry contents. Maps to CLI exit code 1.
class ValidationError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

// Incompatible tensor or architecture shapes.
class ShapeError : public std::invalid_argument {
public:
    using std::invalid_argument::invalid_argument;
};

// Divergence or other failure while optimizing. Maps to exit code 2.
class TrainingError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

// File system or container failures. Maps to exit code 3.
class IoError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

class ChecksumError : public IoError {
public:
    using IoError::IoError;
};

}  // namespace xl

namespace xl {

// Config text that is not well-formed JSON.
class ConfigParseError : public ValidationError {
public:
    using ValidationError::ValidationError;
};

// Checkpoint written by an incompatible container version.
class SchemaError : public IoError {
public:
    using IoError::IoError;
};

// Checkpoint produced under a different configuration.
class ConfigMismatchError : public ValidationError {
public:
    using ValidationError::ValidationError;
};

}  // namespace xl
