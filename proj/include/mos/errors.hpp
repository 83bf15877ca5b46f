#pragma once

#include <stdexcept>
#include <string>

namespace mos {

/// Tensor or vector dimensions do not line up.
class ShapeError : public std::invalid_argument {
public:
    using std::invalid_argument::invalid_argument;
};

/// An API was called outside its documented preconditions.
class UsageError : public std::logic_error {
public:
    using std::logic_error::logic_error;
};

/// A configuration record violates its invariants.
class ConfigError : public std::invalid_argument {
public:
    using std::invalid_argument::invalid_argument;
};

/// A file could not be read, written or parsed.
class IoError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/// A required input file does not exist.
class MissingFileError : public IoError {
public:
    using IoError::IoError;
};

/// An input file exists but its contents are malformed.
class FormatError : public IoError {
public:
    using IoError::IoError;
};

} // namespace mos
