#pragma once

#include <stdexcept>
#include <string>

namespace gshield {

/// Error category, mapped one-to-one onto CLI exit codes.
enum class ErrorKind {
    Usage = 1,
    Config = 2,
    Data = 3,
    Numeric = 4,
};

class Error : public std::runtime_error {
public:
    Error(ErrorKind kind, const std::string& what)
        : std::runtime_error(what), kind_(kind) {}

    ErrorKind kind() const noexcept { return kind_; }
    int exit_code() const noexcept { return static_cast<int>(kind_); }

private:
    ErrorKind kind_;
};

/// Tensor shape mismatch; the message names the offending dimension.
class ShapeError : public Error {
public:
    explicit ShapeError(const std::string& what) : Error(ErrorKind::Data, what) {}
};

class ConfigError : public Error {
public:
    explicit ConfigError(const std::string& what) : Error(ErrorKind::Config, what) {}
};

class DataError : public Error {
public:
    explicit DataError(const std::string& what) : Error(ErrorKind::Data, what) {}
};

/// Non-finite loss or collapsed training.
class NumericError : public Error {
public:
    explicit NumericError(const std::string& what) : Error(ErrorKind::Numeric, what) {}
};

} // namespace gshield
