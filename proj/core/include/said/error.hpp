#pragma once

#include <cstddef>
#include <stdexcept>
#include <string>

namespace said {

/// Base class of every error raised by the library.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Failure of a numerical routine (singular systems, NaN losses, ...).
class NumericalError : public Error {
 public:
  using Error::Error;
};

/// Malformed or unsupported input data.
class FormatError : public Error {
 public:
  using Error::Error;
};

class DimensionMismatch : public Error {
 public:
  using Error::Error;
};

class NotPositiveDefinite : public NumericalError {
 public:
  using NumericalError::NumericalError;
};

class NotSymmetric : public NumericalError {
 public:
  using NumericalError::NumericalError;
};

class NotPSD : public NumericalError {
 public:
  using NumericalError::NumericalError;
};

class NonScalarLoss : public Error {
 public:
  using Error::Error;
};

class NaNLoss : public NumericalError {
 public:
  using NumericalError::NumericalError;
};

class ParseError : public FormatError {
 public:
  ParseError(std::size_t line, const std::string& reason)
      : FormatError("line " + std::to_string(line) + ": " + reason), line_(line) {}

  std::size_t line() const noexcept { return line_; }

 private:
  std::size_t line_;
};

class IndexOutOfRange : public FormatError {
 public:
  using FormatError::FormatError;
};

class DegenerateTriangle : public NumericalError {
 public:
  using NumericalError::NumericalError;
};

class SingularSystem : public NumericalError {
 public:
  using NumericalError::NumericalError;
};

class NoCompatibleFace : public Error {
 public:
  using Error::Error;
};

class RankDeficientBlendshapes : public NumericalError {
 public:
  using NumericalError::NumericalError;
};

class UnsupportedEncoding : public FormatError {
 public:
  using FormatError::FormatError;
};

class CorruptHeader : public FormatError {
 public:
  using FormatError::FormatError;
};

class TooShort : public Error {
 public:
  using Error::Error;
};

class EmptyInput : public Error {
 public:
  using Error::Error;
};

class ShapeMismatch : public DimensionMismatch {
 public:
  using DimensionMismatch::DimensionMismatch;
};

class AllMaskedRow : public NumericalError {
 public:
  using NumericalError::NumericalError;
};

class Infeasible : public NumericalError {
 public:
  using NumericalError::NumericalError;
};

/// Too few samples for the requested model.
class Degenerate : public Error {
 public:
  using Error::Error;
};

/// Configuration value outside its valid range.
class InvalidConfig : public Error {
 public:
  using Error::Error;
};

}  // namespace said
