#pragma once

#include <stdexcept>
#include <string>

namespace loupe {

struct Error : std::runtime_error {
    using std::runtime_error::runtime_error;
};

// Shape mismatch or invalid dimensions; indicates a caller bug.
struct DimensionError : Error {
    using Error::Error;
};

// Argument outside its valid range (rates, fractions, infeasible budgets).
struct ValueError : Error {
    using Error::Error;
};

// Filesystem failure (open/read/write).
struct IoError : Error {
    using Error::Error;
};

// File content violates a binary format contract.
struct FormatError : Error {
    using Error::Error;
};

struct BadMagicError : FormatError {
    using FormatError::FormatError;
};

struct TruncatedFileError : FormatError {
    using FormatError::FormatError;
};

struct DimensionOverflowError : FormatError {
    using FormatError::FormatError;
};

// Training produced a non-finite loss.
struct DivergenceError : Error {
    using Error::Error;
};

// Sparsity-weight search could not bracket the target rate.
struct CalibrationError : Error {
    using Error::Error;
};

}  // namespace loupe
