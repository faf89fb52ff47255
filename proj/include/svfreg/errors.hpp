#pragma once

#include <stdexcept>
#include <string>

namespace svfreg {

/// Base class of every error raised by the library.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Precondition violated by an argument value (non-finite data, bad sizes, ...).
class InvalidArgument : public Error {
 public:
  using Error::Error;
};

/// Two inputs that must share a lattice do not.
class GridMismatch : public Error {
 public:
  using Error::Error;
};

/// Malformed or unreadable volume / report file.
class FormatError : public Error {
 public:
  using Error::Error;
};

/// The optimizer produced a non-finite loss.
class Divergence : public Error {
 public:
  Divergence(const std::string& what, int iteration)
      : Error(what), iteration_(iteration) {}
  int iteration() const noexcept { return iteration_; }

 private:
  int iteration_;
};

}  // namespace svfreg
