#pragma once

#include <stdexcept>
#include <string>

namespace i2p {

// Base for every library error. Each subclass maps to one CLI exit code.
class Error : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

// Inconsistent tensor shapes.
class DimensionError : public Error {
public:
    using Error::Error;
};

// Invalid hyperparameters or model configuration.
class ConfigError : public Error {
public:
    using Error::Error;
};

// Malformed, missing or inconsistent input data.
class DataError : public Error {
public:
    using Error::Error;
};

// NaN/Inf or degenerate values that prevent a computation.
class NumericError : public Error {
public:
    using Error::Error;
};

}  // namespace i2p
