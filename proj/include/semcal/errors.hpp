#pragma once

#include <stdexcept>
#include <string>

namespace semcal {

/// Error categories. The numeric values are the CLI exit codes and are part of
/// the public contract (see README).
enum class ErrorKind : int {
  InvalidArgument = 3,
  NonFinite = 4,
  RotationOutOfRange = 5,
  OutOfBounds = 6,
  StaleCache = 7,
  NoValidPoints = 8,
  InsufficientOverlap = 9,
  TooFewMatches = 10,
  DegenerateConfiguration = 11,
  NoConsensus = 12,
  EmptyScene = 13,
  ParseError = 14,
  LabelRangeError = 15,
  UnsupportedDepth = 16,
  IoError = 17,
  SchemaVersionError = 18,
};

const char* to_string(ErrorKind kind);

class Error : public std::runtime_error {
 public:
  Error(ErrorKind kind, const std::string& what)
      : std::runtime_error(what), kind_(kind) {}

  ErrorKind kind() const noexcept { return kind_; }

 private:
  ErrorKind kind_;
};

#define SEMCAL_DEFINE_ERROR(Name)                                   \
  class Name : public Error {                                       \
   public:                                                          \
    explicit Name(const std::string& what)                          \
        : Error(ErrorKind::Name, std::string(#Name ": ") + what) {} \
  };

SEMCAL_DEFINE_ERROR(InvalidArgument)
SEMCAL_DEFINE_ERROR(NonFinite)
SEMCAL_DEFINE_ERROR(RotationOutOfRange)
SEMCAL_DEFINE_ERROR(OutOfBounds)
SEMCAL_DEFINE_ERROR(StaleCache)
SEMCAL_DEFINE_ERROR(NoValidPoints)
SEMCAL_DEFINE_ERROR(InsufficientOverlap)
SEMCAL_DEFINE_ERROR(TooFewMatches)
SEMCAL_DEFINE_ERROR(DegenerateConfiguration)
SEMCAL_DEFINE_ERROR(NoConsensus)
SEMCAL_DEFINE_ERROR(EmptyScene)
SEMCAL_DEFINE_ERROR(LabelRangeError)
SEMCAL_DEFINE_ERROR(UnsupportedDepth)
SEMCAL_DEFINE_ERROR(IoError)
SEMCAL_DEFINE_ERROR(SchemaVersionError)

#undef SEMCAL_DEFINE_ERROR

/// Parse failure with a location (line number for text, byte offset for
/// binary inputs).
class ParseError : public Error {
 public:
  ParseError(const std::string& source, std::size_t location,
             const std::string& what)
      : Error(ErrorKind::ParseError, "ParseError: " + source + ":" +
                                         std::to_string(location) + ": " +
                                         what),
        location_(location) {}

  std::size_t location() const noexcept { return location_; }

 private:
  std::size_t location_;
};

}  // namespace semcal
