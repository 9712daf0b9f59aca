#pragma once

#include <cstddef>
#include <stdexcept>
#include <string>

namespace darslp {

// Base for everything this library throws. The CLI maps subclasses to
// exit codes: validation errors 2, missing/stale upstream 3, divergence 4.
struct Error : std::runtime_error {
    using std::runtime_error::runtime_error;
};

struct ValidationError : Error {
    using Error::Error;
};

struct LayoutMismatch : ValidationError {
    using ValidationError::ValidationError;
};
struct ShapeMismatch : ValidationError {
    using ValidationError::ValidationError;
};
struct NonFiniteInput : ValidationError {
    using ValidationError::ValidationError;
};
struct DegenerateFrame : ValidationError {
    using ValidationError::ValidationError;
};
struct HashMismatch : ValidationError {
    using ValidationError::ValidationError;
};
struct EmptyCorpus : ValidationError {
    using ValidationError::ValidationError;
};
struct EmptyDataset : ValidationError {
    using ValidationError::ValidationError;
};
struct EmptyBatch : ValidationError {
    using ValidationError::ValidationError;
};
struct EmptySequence : ValidationError {
    using ValidationError::ValidationError;
};
struct EmptyInput : ValidationError {
    using ValidationError::ValidationError;
};
struct AllMaskedRow : ValidationError {
    using ValidationError::ValidationError;
};
struct LengthOutOfRange : ValidationError {
    using ValidationError::ValidationError;
};
struct DegenerateSigma : ValidationError {
    using ValidationError::ValidationError;
};
struct TooFewFrames : ValidationError {
    using ValidationError::ValidationError;
};
struct SequenceTooLong : ValidationError {
    using ValidationError::ValidationError;
};

struct FormatError : ValidationError {
    FormatError(const std::string& msg, std::size_t byte_offset)
        : ValidationError(msg + " (at byte " + std::to_string(byte_offset) + ")"),
          offset(byte_offset) {}
    explicit FormatError(const std::string& msg) : ValidationError(msg), offset(0) {}
    std::size_t offset;
};

struct IOError : Error {
    using Error::Error;
};
struct MissingUpstream : Error {
    using Error::Error;
};
struct StaleArtifact : Error {
    using Error::Error;
};
struct DivergenceDetected : Error {
    using Error::Error;
};

}  // namespace darslp
