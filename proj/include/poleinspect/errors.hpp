#pragma once

#include <stdexcept>
#include <string>

namespace poleinspect {

/// Base class of every error thrown by the library.
class Error : public std::runtime_error {
public:
    explicit Error(const std::string& msg) : std::runtime_error(msg) {}
};

/// Two boxes (or a box and an operation) disagree on their coordinate frame.
class FrameMismatch : public Error {
public:
    using Error::Error;
};

/// Parameters violate a documented precondition or invariant.
class InvalidParams : public Error {
public:
    using Error::Error;
};

/// A raster is empty or structurally malformed.
class InvalidImage : public Error {
public:
    using Error::Error;
};

/// A crop is too small for the requested half split.
class CropTooSmall : public Error {
public:
    using Error::Error;
};

/// Training manifest contains no annotation of the requested class.
class EmptyTargetClass : public Error {
public:
    using Error::Error;
};

/// Fewer than two positive entries; the split protocol is undefined.
class InsufficientPositives : public Error {
public:
    using Error::Error;
};

/// Writing a generated corpus (images or manifest) failed.
class CorpusWriteError : public Error {
public:
    using Error::Error;
};

/// Negative pool is smaller than the requested balanced sample.
class PoolExhausted : public Error {
public:
    using Error::Error;
};

/// Sequence lengths or feature dimensions disagree.
class ShapeMismatch : public Error {
public:
    using Error::Error;
};

/// Training input contains only one class.
class SingleClassInput : public Error {
public:
    using Error::Error;
};

/// A class count is zero where a positive count is required.
class InvalidCounts : public Error {
public:
    using Error::Error;
};

/// The metric has no defined value for this input (e.g. single-class labels).
class UndefinedMetric : public Error {
public:
    using Error::Error;
};

/// An artifact file declares an unsupported format version or kind.
class FormatVersionError : public Error {
public:
    using Error::Error;
};

/// An artifact file failed its content checksum.
class ChecksumError : public Error {
public:
    using Error::Error;
};

/// A run configuration is missing required keys (seeds are never defaulted).
class InvalidConfig : public Error {
public:
    using Error::Error;
};

/// Generic file-system failure outside corpus writing.
class IoError : public Error {
public:
    using Error::Error;
};

}  // namespace poleinspect
