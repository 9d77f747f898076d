#pragma once

#include <cstddef>
#include <stdexcept>
#include <string>

namespace batunet {

/// Root of every exception thrown by the library.
class Error : public std::runtime_error {
  public:
    using std::runtime_error::runtime_error;
};

/// Incompatible tensor shapes or channel counts.
class ShapeError : public Error {
  public:
    using Error::Error;
};

/// A precondition on values was violated (non-finite data, out of range
/// probability, empty split, bad config, ...).
class InvalidInput : public Error {
  public:
    using Error::Error;
};

/// Malformed VOL3 container. `offset()` is the byte position where
/// decoding failed.
class FormatError : public Error {
  public:
    FormatError(const std::string &what, std::size_t offset)
        : Error(what + " (at byte " + std::to_string(offset) + ")"), offset_(offset) {}
    std::size_t offset() const noexcept { return offset_; }

  private:
    std::size_t offset_;
};

/// File system failure (unreadable input, unwritable output).
class IoError : public Error {
  public:
    using Error::Error;
};

class CheckpointError : public Error {
  public:
    using Error::Error;
};

/// Synthetic geometry that cannot be realised (tumor larger than organ, ...).
class GenerationError : public Error {
  public:
    using Error::Error;
};

/// Metric is mathematically undefined for the input (e.g. AUC on one class).
class UndefinedMetric : public Error {
  public:
    using Error::Error;
};

/// Training produced NaN/Inf.
class NumericFailure : public Error {
  public:
    using Error::Error;
};

} // namespace batunet
