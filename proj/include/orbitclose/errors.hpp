#pragma once

#include <cstddef>
#include <stdexcept>
#include <string>

namespace orbitclose {

/// Root of every error thrown by the library.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;

  /// Pipeline stage the error escaped from; the innermost stage wins.
  void add_context(const std::string& stage) {
    if (stage_.empty()) stage_ = stage;
  }
  const std::string& stage() const noexcept { return stage_; }

 private:
  std::string stage_;
};

/// Bad input: malformed source text, schema violations, wrong dimensions.
class UsageError : public Error {
 public:
  using Error::Error;
};

/// A computation could not be carried out to the requested accuracy.
class NumericalError : public Error {
 public:
  using Error::Error;
};

class SyntaxError : public UsageError {
 public:
  SyntaxError(std::size_t offset, std::string expected)
      : UsageError("syntax error at offset " + std::to_string(offset) + ": expected " + expected),
        offset_(offset),
        expected_(std::move(expected)) {}

  std::size_t offset() const noexcept { return offset_; }
  const std::string& expected() const noexcept { return expected_; }

 private:
  std::size_t offset_;
  std::string expected_;
};

#define ORBITCLOSE_ERROR(Name, Base)   \
  class Name : public Base {           \
   public:                             \
    using Base::Base;                  \
  };

ORBITCLOSE_ERROR(ArityError, UsageError)
ORBITCLOSE_ERROR(UnknownSymbol, UsageError)
ORBITCLOSE_ERROR(DimensionMismatch, UsageError)
ORBITCLOSE_ERROR(OrderUnsupported, UsageError)
ORBITCLOSE_ERROR(SchemaError, UsageError)
ORBITCLOSE_ERROR(ManifoldUnsupported, UsageError)
ORBITCLOSE_ERROR(InsufficientFamily, UsageError)

ORBITCLOSE_ERROR(DomainError, NumericalError)
ORBITCLOSE_ERROR(ChartDomainError, NumericalError)
ORBITCLOSE_ERROR(ToleranceFailure, NumericalError)
ORBITCLOSE_ERROR(BlowUp, NumericalError)
ORBITCLOSE_ERROR(NoCrossing, NumericalError)
ORBITCLOSE_ERROR(TangentialCrossing, NumericalError)
ORBITCLOSE_ERROR(GeodesicAmbiguous, NumericalError)
ORBITCLOSE_ERROR(AlphaTooLarge, NumericalError)
ORBITCLOSE_ERROR(WindowTooSmall, NumericalError)
ORBITCLOSE_ERROR(ZeroSpeed, NumericalError)
ORBITCLOSE_ERROR(RadiusTooLarge, NumericalError)
ORBITCLOSE_ERROR(OverlapPresent, NumericalError)
ORBITCLOSE_ERROR(TooManyBranches, NumericalError)
ORBITCLOSE_ERROR(NotSlowEnough, NumericalError)
ORBITCLOSE_ERROR(BranchConstructionFailure, NumericalError)
ORBITCLOSE_ERROR(NotPeriodic, NumericalError)
ORBITCLOSE_ERROR(TangentialSection, NumericalError)
ORBITCLOSE_ERROR(EigenvalueNotSimple, NumericalError)
ORBITCLOSE_ERROR(WindowTooWide, NumericalError)

#undef ORBITCLOSE_ERROR

}  // namespace orbitclose
