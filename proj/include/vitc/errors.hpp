#pragma once

#include <stdexcept>
#include <string>

namespace vitc {

/// Base of all library errors. `exit_code()` is the process status the CLI
/// reports when the error escapes a command.
class Error : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
    virtual int exit_code() const noexcept { return 1; }
};

class UsageError : public Error {
public:
    using Error::Error;
    int exit_code() const noexcept override { return 2; }
};

class ConfigError : public Error {
public:
    using Error::Error;
    int exit_code() const noexcept override { return 3; }
};

class InvalidInput : public Error {
public:
    using Error::Error;
    int exit_code() const noexcept override { return 4; }
};

class ShapeError : public Error {
public:
    using Error::Error;
    int exit_code() const noexcept override { return 4; }
};

class DataError : public Error {
public:
    using Error::Error;
    int exit_code() const noexcept override { return 4; }
};

class UnknownStructure : public Error {
public:
    using Error::Error;
    int exit_code() const noexcept override { return 2; }
};

class DuplicateStructure : public Error {
public:
    using Error::Error;
    int exit_code() const noexcept override { return 2; }
};

class NumericalError : public Error {
public:
    using Error::Error;
    int exit_code() const noexcept override { return 5; }
};

}  // namespace vitc
