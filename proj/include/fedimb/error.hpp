#pragma once

#include <stdexcept>
#include <string>

namespace fedimb {

// Base of every error thrown by the library. Callers that only care about
// "something in fedimb failed" catch this.
class Error : public std::runtime_error {
public:
  using std::runtime_error::runtime_error;
};

class InvalidParameter : public Error {
public:
  using Error::Error;
};

class MalformedFile : public Error {
public:
  using Error::Error;
};

class CorruptRecord : public Error {
public:
  CorruptRecord(const std::string& what, std::size_t record)
      : Error(what), record_(record) {}
  std::size_t record() const noexcept { return record_; }

private:
  std::size_t record_;
};

class IndexError : public Error {
public:
  IndexError(const std::string& what, long long value)
      : Error(what), value_(value) {}
  long long value() const noexcept { return value_; }

private:
  long long value_;
};

class InfeasiblePartition : public Error {
public:
  using Error::Error;
};

class EmptyShard : public Error {
public:
  using Error::Error;
};

class EmptyGroup : public Error {
public:
  using Error::Error;
};

class ShapeMismatch : public Error {
public:
  using Error::Error;
};

// NaN/Inf loss during training.
class NumericFailure : public Error {
public:
  using Error::Error;
};

class ConfigError : public Error {
public:
  using Error::Error;
};

} // namespace fedimb
