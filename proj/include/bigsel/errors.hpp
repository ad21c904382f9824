#ifndef BIGSEL_ERRORS_HPP
#define BIGSEL_ERRORS_HPP

#include <cstddef>
#include <stdexcept>
#include <string>
#include <vector>

namespace bigsel {

// Base class for all library errors.
class Error : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

// Bad user input: dimensions, ranges, inconsistent configuration. CLI exit code 2.
class ArgumentError : public Error {
public:
    using Error::Error;
};

// Out-of-range element or column access.
class IndexError : public ArgumentError {
public:
    using ArgumentError::ArgumentError;
};

// Write attempted through a read-only handle.
class ModeError : public ArgumentError {
public:
    using ArgumentError::ArgumentError;
};

// Filesystem-level failures: disk full, unwritable path, refusal to overwrite.
// CLI exit code 3.
class StorageError : public Error {
public:
    using Error::Error;
};

// Malformed or incompatible on-disk data (bad magic, version, truncation).
class FormatError : public Error {
public:
    using Error::Error;
};

// Deterministic-replay violation: a restored matrix block or checkpoint does
// not match its recorded digest. CLI exit code 4.
class ReproducibilityError : public Error {
public:
    using Error::Error;
};

// A column with (numerically) zero variance cannot be standardized.
class DegenerateColumn : public ArgumentError {
public:
    DegenerateColumn(std::size_t column, const std::string& what)
        : ArgumentError(what), column_(column) {}
    std::size_t column() const noexcept { return column_; }

private:
    std::size_t column_;
};

// The active-set Gram matrix lost positive definiteness mid-path.
class SingularGram : public Error {
public:
    SingularGram(std::vector<std::size_t> indices, const std::string& what)
        : Error(what), indices_(std::move(indices)) {}
    const std::vector<std::size_t>& indices() const noexcept { return indices_; }

private:
    std::vector<std::size_t> indices_;
};

}  // namespace bigsel

#endif
