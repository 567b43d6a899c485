#pragma once

#include <stdexcept>
#include <string>

namespace fstta {

/// Base for every error raised by the library.
class Error : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/// Tensor shapes that do not conform for the requested operation.
class ShapeError : public Error {
public:
    using Error::Error;
};

/// Invalid configuration values or arguments.
class ConfigError : public Error {
public:
    using Error::Error;
};

/// Non-finite losses, divergence and similar numeric failures.
class NumericError : public Error {
public:
    using Error::Error;
};

/// Malformed or inconsistent data, including on-disk files.
class DataError : public Error {
public:
    enum class Kind { bad_magic, truncated, version_mismatch, invalid_content, io };

    DataError(Kind kind, const std::string& what) : Error(what), kind_(kind) {}

    Kind kind() const noexcept { return kind_; }

private:
    Kind kind_;
};

}  // namespace fstta
