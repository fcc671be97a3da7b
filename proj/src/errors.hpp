#pragma once

#include <stdexcept>
#include <string>

namespace sasnet {

// Base class for all engine errors.
class Error : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

// Dimension/extent violations (degenerate conv output, channel mismatch, ...).
class ShapeError : public Error {
public:
    using Error::Error;
};

// Filesystem-level failures (missing file, short read, unwritable path).
class IoError : public Error {
public:
    using Error::Error;
};

// Structurally invalid file contents (bad magic, version, schema mismatch).
class FormatError : public Error {
public:
    using Error::Error;
};

} // namespace sasnet
