#pragma once

#include <stdexcept>
#include <string>

namespace coldrec {

// Base for every failure raised by the library. The CLI maps each subclass
// to its own exit status.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Invalid argument or configuration value.
class ParameterError : public Error {
 public:
  using Error::Error;
};

class IoError : public Error {
 public:
  using Error::Error;
};

// Malformed input content (JSON line, embedding line, checkpoint layout).
class ParseError : public Error {
 public:
  using Error::Error;
};

class NotFoundError : public Error {
 public:
  using Error::Error;
};

// A parameter or loss became non-finite during training.
class DivergenceError : public Error {
 public:
  DivergenceError(const std::string& what, int epoch)
      : Error(what), epoch_(epoch) {}
  int epoch() const noexcept { return epoch_; }

 private:
  int epoch_;
};

// An API contract was violated by the caller (e.g. stale forward cache).
class ContractError : public Error {
 public:
  using Error::Error;
};

// A pipeline artifact no longer matches the inputs it was derived from.
class StalenessError : public Error {
 public:
  using Error::Error;
};

// Another process holds the work-directory lock.
class BusyError : public Error {
 public:
  using Error::Error;
};

}  // namespace coldrec
