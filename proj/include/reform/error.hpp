#pragma once

#include <stdexcept>
#include <string>

namespace reform {

// Error classes map one-to-one onto CLI exit codes.
enum class ErrorClass { usage = 2, io = 3, format = 4, config = 5, data = 6 };

class Error : public std::runtime_error {
public:
    Error(ErrorClass cls, const std::string& what) : std::runtime_error(what), cls_(cls) {}
    ErrorClass error_class() const noexcept { return cls_; }
    int exit_code() const noexcept { return static_cast<int>(cls_); }

private:
    ErrorClass cls_;
};

struct UsageError : Error {
    explicit UsageError(const std::string& w) : Error(ErrorClass::usage, w) {}
};

struct IoError : Error {
    explicit IoError(const std::string& w) : Error(ErrorClass::io, w) {}
};

// Bad magic / version, truncated payloads, non-finite tensors.
struct FormatError : Error {
    explicit FormatError(const std::string& w) : Error(ErrorClass::format, w) {}
};
struct CorruptFileError : FormatError {
    using FormatError::FormatError;
};
struct ValidationError : FormatError {
    using FormatError::FormatError;
};

// Invalid configuration: budgets, head specs, schema mismatches, position limits.
struct ConfigError : Error {
    explicit ConfigError(const std::string& w) : Error(ErrorClass::config, w) {}
};
struct SchemaError : ConfigError {
    using ConfigError::ConfigError;
};
struct PositionError : ConfigError {
    using ConfigError::ConfigError;
};
struct SelectionError : ConfigError {
    using ConfigError::ConfigError;
};

// Bad input data: token ids, cache preconditions, queries, datasets.
struct DataError : Error {
    explicit DataError(const std::string& w) : Error(ErrorClass::data, w) {}
};
struct InputError : DataError {
    using DataError::DataError;
};
struct QueryError : DataError {
    using DataError::DataError;
};
struct SplitError : DataError {
    using DataError::DataError;
};

} // namespace reform
