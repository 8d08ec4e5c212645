#pragma once

#include <stdexcept>
#include <string>

namespace lumbarseg {

// Root of every exception thrown by the library. The CLI maps the concrete
// kinds below onto process exit codes.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class ShapeError : public Error {
 public:
  using Error::Error;
};

// Non-finite values where finite ones are required (inputs, gradients, losses).
class NumericError : public Error {
 public:
  using Error::Error;
};

// Malformed on-disk data: volume headers, payloads, checkpoints, config text.
class FormatError : public Error {
 public:
  using Error::Error;
};

class GeometryError : public Error {
 public:
  using Error::Error;
};

class SpecError : public Error {
 public:
  using Error::Error;
};

class ConfigError : public Error {
 public:
  using Error::Error;
};

class DataError : public Error {
 public:
  using Error::Error;
};

class TrainingError : public Error {
 public:
  using Error::Error;
};

class CheckpointError : public Error {
 public:
  using Error::Error;
};

class LocalizationError : public Error {
 public:
  using Error::Error;
};

class EvaluationError : public Error {
 public:
  using Error::Error;
};

}  // namespace lumbarseg
