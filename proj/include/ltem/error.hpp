#pragma once

#include <cstddef>
#include <stdexcept>
#include <string>

namespace ltem {

/// Base class for every error raised by the library.
class Error : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/// Caller passed something outside an operation's contract.
class InvalidArgument : public Error {
public:
    using Error::Error;
};

/// The model has a singular covariance (some edge correlation is 1) or
/// a matrix that must be inverted is numerically singular.
class DegenerateModel : public Error {
public:
    using Error::Error;
};

/// Malformed input file; carries the 1-based line number when known.
class ParseError : public Error {
public:
    ParseError(const std::string& what, std::size_t line)
        : Error(line ? "line " + std::to_string(line) + ": " + what : what), line_(line) {}

    [[nodiscard]] std::size_t line() const noexcept { return line_; }

private:
    std::size_t line_;
};

/// Numerical data violates an assumption (NaN, all-zero column, ...).
class DataError : public Error {
public:
    using Error::Error;
};

}  // namespace ltem
