#pragma once

#include <stdexcept>
#include <string>

namespace sara {

// Base of every error raised by the library. Subclasses map onto the
// contract categories used throughout (dimension, domain, numeric, ...).
class Error : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

class DimensionError : public Error {
public:
    using Error::Error;
};

class DomainError : public Error {
public:
    using Error::Error;
};

class SingularityError : public Error {
public:
    using Error::Error;
};

class NumericError : public Error {
public:
    using Error::Error;
};

class ContractError : public Error {
public:
    using Error::Error;
};

class ConfigError : public Error {
public:
    using Error::Error;
};

class CheckpointError : public Error {
public:
    using Error::Error;
};

// A loss or gradient went non-finite during training.
class NonFiniteError : public NumericError {
public:
    using NumericError::NumericError;
};

}  // namespace sara
