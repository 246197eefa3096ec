#pragma once

#include <stdexcept>
#include <string>

namespace tpr {

/// Bad input to an operation (shape mismatch, out-of-range parameter, ...).
class InvalidArgument : public std::invalid_argument {
public:
    using std::invalid_argument::invalid_argument;
};

/// A request that would exceed a configured resource budget.
class ResourceError : public std::runtime_error {
public:
    ResourceError(const std::string& what, std::size_t required_bytes)
        : std::runtime_error(what), required_bytes_(required_bytes) {}

    std::size_t required_bytes() const noexcept { return required_bytes_; }

private:
    std::size_t required_bytes_;
};

/// Unusable configuration: missing files, unparsable config, unknown keys.
class ConfigError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/// Failure while running an otherwise valid computation (I/O, divergence).
class RuntimeError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

}  // namespace tpr
