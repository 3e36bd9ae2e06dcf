#pragma once

#include <cstddef>
#include <stdexcept>
#include <string>

namespace sdclab {

/// Base class for every error raised by the library.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Tensor shapes that do not fit together.
class DimensionError : public Error {
 public:
  using Error::Error;
};

/// Class label or segment index outside its valid range.
class IndexError : public Error {
 public:
  using Error::Error;
};

/// Caller broke an API precondition (e.g. backward from a non-scalar).
class ContractError : public Error {
 public:
  using Error::Error;
};

/// Non-finite values showed up where finite ones are required.
class NumericalError : public Error {
 public:
  using Error::Error;
};

/// Malformed input file. `offset` is the byte position of the failure.
class ParseError : public Error {
 public:
  ParseError(const std::string& what, std::size_t offset)
      : Error(what + " (at byte " + std::to_string(offset) + ")"), offset_(offset) {}
  std::size_t offset() const noexcept { return offset_; }

 private:
  std::size_t offset_;
};

/// Well-formed file whose content does not match what the reader expects.
class SchemaError : public Error {
 public:
  using Error::Error;
};

/// Invalid model, dataset or experiment configuration.
class ConfigError : public Error {
 public:
  using Error::Error;
};

/// A file-backed segment pool ran out while sampling without replacement.
class PoolExhaustedError : public Error {
 public:
  using Error::Error;
};

/// Metric evaluated on input where it is not defined (empty set, zero vector).
class UndefinedMetricError : public Error {
 public:
  using Error::Error;
};

/// Plot kind not applicable to the given run.
class UnsupportedPlotError : public Error {
 public:
  using Error::Error;
};

}  // namespace sdclab
