#pragma once

#include <stdexcept>
#include <string>

namespace readmit {

// Each failure class maps to its own CLI exit code.
class Error : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
    virtual int exit_code() const noexcept { return 1; }
};

class IoError : public Error {
public:
    using Error::Error;
    int exit_code() const noexcept override { return 3; }
};

class SchemaError : public Error {
public:
    using Error::Error;
    int exit_code() const noexcept override { return 4; }
};

class DataError : public Error {
public:
    using Error::Error;
    int exit_code() const noexcept override { return 5; }
};

class FormatError : public Error {
public:
    using Error::Error;
    int exit_code() const noexcept override { return 6; }
};

class NumericError : public Error {
public:
    using Error::Error;
    int exit_code() const noexcept override { return 7; }
};

class ShapeError : public Error {
public:
    using Error::Error;
    int exit_code() const noexcept override { return 8; }
};

/// Re-raises another failure with extra context while keeping its exit code.
class ContextError : public Error {
public:
    ContextError(const std::string& message, int code) : Error(message), code_(code) {}
    int exit_code() const noexcept override { return code_; }

private:
    int code_;
};

}  // namespace readmit
