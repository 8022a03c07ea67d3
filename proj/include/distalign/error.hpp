#pragma once

#include <cstddef>
#include <stdexcept>
#include <string>

namespace distalign {

/// Base class for every error raised by the library.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class InvalidInput : public Error {
 public:
  using Error::Error;
};

/// A frequency vector with no samples in it.
class EmptySample : public Error {
 public:
  using Error::Error;
};

class InvalidConfig : public Error {
 public:
  using Error::Error;
};

class NumericDegenerate : public Error {
 public:
  using Error::Error;
};

/// A composed unsafe condition that is not a probability distribution.
class InvalidDirection : public Error {
 public:
  using Error::Error;
};

/// Reverse sampling produced a non-finite state.
class DivergenceError : public Error {
 public:
  DivergenceError(const std::string& what, int step) : Error(what), step_(step) {}
  int step() const noexcept { return step_; }

 private:
  int step_;
};

/// The oracle backend could not be reached (retryable at the transport level).
class OracleUnavailable : public Error {
 public:
  using Error::Error;
};

/// The oracle backend answered with something that violates the wire contract.
class ProtocolError : public Error {
 public:
  using Error::Error;
};

}  // namespace distalign
