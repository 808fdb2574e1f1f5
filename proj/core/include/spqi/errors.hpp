#pragma once

#include <stdexcept>

namespace spqi {

// Every failure the library surfaces derives from Error so callers (and the
// CLI exit-code mapping) can distinguish categories without string matching.
class Error : public std::runtime_error {
  using std::runtime_error::runtime_error;
};

// Tensor dimension mismatch; message names both shapes.
class ShapeError : public Error {
  using Error::Error;
};

// A documented precondition was violated.
class ContractError : public Error {
  using Error::Error;
};

// Catalog / dataset inconsistency (unknown ids, malformed records, ...).
class DataError : public Error {
  using Error::Error;
};

class GenerationError : public Error {
  using Error::Error;
};

class CalibrationError : public Error {
  using Error::Error;
};

class TrainingError : public Error {
  using Error::Error;
};

class CorrelationError : public Error {
  using Error::Error;
};

class IoError : public Error {
  using Error::Error;
};

}  // namespace spqi
