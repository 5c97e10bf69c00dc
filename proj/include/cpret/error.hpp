#pragma once

#include <stdexcept>
#include <string>

namespace cpret {

// Malformed or inconsistent input data (files, ids, schemas).
class DataError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

// Binary file with a bad header, truncated payload or degenerate rows.
class FormatError : public DataError {
public:
    using DataError::DataError;
};

// Caller violated an operation's precondition (bad sizes, bad config).
class UsageError : public std::invalid_argument {
public:
    using std::invalid_argument::invalid_argument;
};

// Non-finite loss or parameters during optimization.
class NumericError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

}  // namespace cpret
