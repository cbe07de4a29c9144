#pragma once

#include <cstddef>
#include <stdexcept>
#include <string>

namespace gsd {

/// Base class for every error raised by the library.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// An input lies outside the domain of the operation (zero-norm vectors,
/// out-of-range labels, mismatched dimensions).
class DomainError : public Error {
 public:
  using Error::Error;
};

/// A relaxation angle of exactly zero was used in a form that divides by its sine.
class DegenerateAngleError : public Error {
 public:
  using Error::Error;
};

class InvalidParameterError : public Error {
 public:
  using Error::Error;
};

/// Norm statistics with mu - sigma <= 0, or computed from an empty set.
class DegenerateStatisticsError : public Error {
 public:
  using Error::Error;
};

/// Loss or objective became non-finite during an iterative procedure.
class DivergenceError : public Error {
 public:
  using Error::Error;
};

/// Malformed binary or text input. `offset()` is the byte offset at which
/// parsing failed (or the line number for text formats, see `what()`).
class ParseError : public Error {
 public:
  ParseError(const std::string& what, std::size_t offset)
      : Error(what + " (at byte offset " + std::to_string(offset) + ")"), offset_(offset) {}

  std::size_t offset() const noexcept { return offset_; }

 private:
  std::size_t offset_;
};

}  // namespace gsd
