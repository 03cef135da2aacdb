#pragma once

#include <stdexcept>
#include <string>

namespace wordpref {

// Base for every error the toolkit raises. Each subclass maps onto one CLI
// exit code (see commands.hpp).
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class IoError : public Error {
 public:
  using Error::Error;
};

// Input text could not be parsed at all.
class ParseError : public Error {
 public:
  using Error::Error;
};

// Input parsed but contradicts the declared structure (unknown factor,
// duplicate id, missing cell, ...).
class SchemaError : public Error {
 public:
  using Error::Error;
};

// Values out of range (ratings outside 1-5, negative surprisal, ...).
class ValidationError : public Error {
 public:
  using Error::Error;
};

class ProtocolError : public Error {
 public:
  using Error::Error;
};

class BackendError : public Error {
 public:
  using Error::Error;
};

class UsageError : public Error {
 public:
  using Error::Error;
};

// Not enough data to compute a statistic (n < 2, no shared items, ...).
class InsufficientData : public Error {
 public:
  using Error::Error;
};

}  // namespace wordpref
