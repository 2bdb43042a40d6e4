#pragma once

#include <stdexcept>
#include <string>

namespace plgf {

/// Base class for every error raised by the library. `kind()` is the
/// machine-readable tag the CLI puts in its error JSON.
class Error : public std::runtime_error {
public:
    Error(std::string kind, const std::string& what)
        : std::runtime_error(what), kind_(std::move(kind)) {}
    const std::string& kind() const noexcept { return kind_; }

private:
    std::string kind_;
};

/// Caller handed in data that violates a precondition (shape, range, sign).
class InputError : public Error {
public:
    explicit InputError(const std::string& what) : Error("input_error", what) {}
};

/// Hyperparameters or module wiring are inconsistent.
class ConfigError : public Error {
public:
    explicit ConfigError(const std::string& what) : Error("config_error", what) {}
};

/// Dataset, checkpoint or record could not be read back.
class LoadError : public Error {
public:
    explicit LoadError(const std::string& what) : Error("load_error", what) {}
};

/// Derivative requested at a point where it does not exist.
class DomainError : public Error {
public:
    explicit DomainError(const std::string& what) : Error("domain_error", what) {}
};

/// Training produced a non-finite value.
class NumericError : public Error {
public:
    explicit NumericError(const std::string& what) : Error("numeric_error", what) {}
};

}  // namespace plgf
