#pragma once

#include <stdexcept>
#include <string>

namespace mmfs {

// Error kinds surfaced by the library. Every operation throws one of these
// (or lets a torch::Error from a malformed tensor operation propagate).

class InvalidArgument : public std::invalid_argument {
public:
    using std::invalid_argument::invalid_argument;
};

// A required model or capability has not been loaded or is not available in
// the current configuration.
class UnavailableState : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

// Input is well-formed but mathematically degenerate (zero-norm vectors, ...).
class DegenerateInput : public std::domain_error {
public:
    using std::domain_error::domain_error;
};

class NumericalHealthError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

// Checkpoint / weight container problems.
class FormatError : public std::runtime_error {
public:
    FormatError(const std::string& what, std::string tensor = {})
        : std::runtime_error(what), tensor_(std::move(tensor)) {}
    const std::string& tensor() const noexcept { return tensor_; }

private:
    std::string tensor_;
};

class CorruptionError : public FormatError {
public:
    using FormatError::FormatError;
};

class MigrationError : public FormatError {
public:
    using FormatError::FormatError;
};

} // namespace mmfs
