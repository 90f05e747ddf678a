#pragma once

#include <stdexcept>
#include <string>

namespace amf {

// Base class so callers can catch everything the engine throws in one place.
struct Error : std::runtime_error {
    explicit Error(const std::string& msg) : std::runtime_error(msg) {}
};

// Operand shapes incompatible for an op. Message names the op and both shapes.
struct ShapeError : Error {
    explicit ShapeError(const std::string& msg) : Error(msg) {}
};

// Math domain violations (log of non-positive, division by zero, ...).
struct DomainError : Error {
    explicit DomainError(const std::string& msg) : Error(msg) {}
};

// Invalid or inconsistent run configuration.
struct ConfigError : Error {
    explicit ConfigError(const std::string& msg) : Error(msg) {}
};

// File parsing / serialization failures.
struct IoError : Error {
    explicit IoError(const std::string& msg) : Error(msg) {}
};

// Bad input data (out-of-range category, NaN where a clean float is required).
struct DataError : Error {
    explicit DataError(const std::string& msg) : Error(msg) {}
};

}  // namespace amf
