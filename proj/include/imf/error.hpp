#pragma once

#include <stdexcept>
#include <string>

namespace imf {

// Base class for all errors raised by the library.
struct Error : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// Operand shapes are incompatible for the requested operation.
struct DimensionError : Error {
  using Error::Error;
};

// Input value outside the mathematical domain of an operation.
struct DomainError : Error {
  using Error::Error;
};

// Malformed input file (carries line/row context in the message).
struct ParseError : Error {
  using Error::Error;
};

// Entity or relation not present in the vocabulary.
struct VocabError : Error {
  using Error::Error;
};

// Loaded data violates an invariant (wrong row count, non-finite values).
struct DataError : Error {
  using Error::Error;
};

// Invalid configuration or incompatible artifacts.
struct ConfigError : Error {
  using Error::Error;
};

// Caller violated an API precondition.
struct LogicError : Error {
  using Error::Error;
};

}  // namespace imf
