#pragma once

#include <stdexcept>
#include <string>
#include <string_view>

namespace dtkd {

enum class ErrorKind {
  ShapeMismatch,
  DomainError,
  NotScalar,
  OddDimension,
  InvalidProbability,
  NonFinite,
  InvalidTemperature,
  InvalidConfig,
  IndexOutOfRange,
  NotStochastic,
  TruncatedFile,
  LabelOutOfRange,
  FormatError,
  IoError,
  ZeroSigma,
  InvalidRange,
  SingleClass,
  EmptyResult,
  MissingAnnotation,
  MalformedPolygon,
  InvalidMask,
  EmptyDataset,
  HeadMismatch,
  EmptyMatrix,
  TooLong,
  AllZeroDifferences,
  TooManyPlayers,
  EmptySet,
  DimMismatch,
  SampleMismatch,
  MalformedCSV,
  DivisionByZero,
};

constexpr std::string_view to_string(ErrorKind kind) {
  switch (kind) {
    case ErrorKind::ShapeMismatch: return "ShapeMismatch";
    case ErrorKind::DomainError: return "DomainError";
    case ErrorKind::NotScalar: return "NotScalar";
    case ErrorKind::OddDimension: return "OddDimension";
    case ErrorKind::InvalidProbability: return "InvalidProbability";
    case ErrorKind::NonFinite: return "NonFinite";
    case ErrorKind::InvalidTemperature: return "InvalidTemperature";
    case ErrorKind::InvalidConfig: return "InvalidConfig";
    case ErrorKind::IndexOutOfRange: return "IndexOutOfRange";
    case ErrorKind::NotStochastic: return "NotStochastic";
    case ErrorKind::TruncatedFile: return "TruncatedFile";
    case ErrorKind::LabelOutOfRange: return "LabelOutOfRange";
    case ErrorKind::FormatError: return "FormatError";
    case ErrorKind::IoError: return "IoError";
    case ErrorKind::ZeroSigma: return "ZeroSigma";
    case ErrorKind::InvalidRange: return "InvalidRange";
    case ErrorKind::SingleClass: return "SingleClass";
    case ErrorKind::EmptyResult: return "EmptyResult";
    case ErrorKind::MissingAnnotation: return "MissingAnnotation";
    case ErrorKind::MalformedPolygon: return "MalformedPolygon";
    case ErrorKind::InvalidMask: return "InvalidMask";
    case ErrorKind::EmptyDataset: return "EmptyDataset";
    case ErrorKind::HeadMismatch: return "HeadMismatch";
    case ErrorKind::EmptyMatrix: return "EmptyMatrix";
    case ErrorKind::TooLong: return "TooLong";
    case ErrorKind::AllZeroDifferences: return "AllZeroDifferences";
    case ErrorKind::TooManyPlayers: return "TooManyPlayers";
    case ErrorKind::EmptySet: return "EmptySet";
    case ErrorKind::DimMismatch: return "DimMismatch";
    case ErrorKind::SampleMismatch: return "SampleMismatch";
    case ErrorKind::MalformedCSV: return "MalformedCSV";
    case ErrorKind::DivisionByZero: return "DivisionByZero";
  }
  return "Unknown";
}

/// Every library failure is reported as an Error carrying a machine-readable kind.
class Error : public std::runtime_error {
 public:
  Error(ErrorKind kind, const std::string& message)
      : std::runtime_error(std::string(to_string(kind)) + ": " + message), kind_(kind) {}

  ErrorKind kind() const noexcept { return kind_; }

 private:
  ErrorKind kind_;
};

[[noreturn]] inline void fail(ErrorKind kind, const std::string& message) {
  throw Error(kind, message);
}

inline void require(bool condition, ErrorKind kind, const std::string& message) {
  if (!condition) fail(kind, message);
}

}  // namespace dtkd
