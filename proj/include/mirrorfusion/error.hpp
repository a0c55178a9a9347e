#pragma once

#include <stdexcept>
#include <string>

namespace mf {

/// Base class for every error raised by the library.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Raster or tensor shapes that do not agree with an operation's contract.
class ShapeError : public Error {
 public:
  using Error::Error;
};

/// Argument outside of its documented domain (bad config, bad count, ...).
class InvalidArgument : public Error {
 public:
  using Error::Error;
};

/// File-system or format error; the message always names the offending path.
class IoError : public Error {
 public:
  using Error::Error;
};

/// Mirror mask without a single positive pixel.
class EmptyMaskError : public InvalidArgument {
 public:
  using InvalidArgument::InvalidArgument;
};

/// Training produced a NaN/Inf loss.
class NonFiniteError : public Error {
 public:
  using Error::Error;
};

}  // namespace mf
