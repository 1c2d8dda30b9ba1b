#include "semcal/errors.hpp"

namespace semcal {

const char* to_string(ErrorKind kind) {
  switch (kind) {
    case ErrorKind::InvalidArgument: return "InvalidArgument";
    case ErrorKind::NonFinite: return "NonFinite";
    case ErrorKind::RotationOutOfRange: return "RotationOutOfRange";
    case ErrorKind::OutOfBounds: return "OutOfBounds";
    case ErrorKind::StaleCache: return "StaleCache";
    case ErrorKind::NoValidPoints: return "NoValidPoints";
    case ErrorKind::InsufficientOverlap: return "InsufficientOverlap";
    case ErrorKind::TooFewMatches: return "TooFewMatches";
    case ErrorKind::DegenerateConfiguration: return "DegenerateConfiguration";
    case ErrorKind::NoConsensus: return "NoConsensus";
    case ErrorKind::EmptyScene: return "EmptyScene";
    case ErrorKind::ParseError: return "ParseError";
    case ErrorKind::LabelRangeError: return "LabelRangeError";
    case ErrorKind::UnsupportedDepth: return "UnsupportedDepth";
    case ErrorKind::IoError: return "IoError";
    case ErrorKind::SchemaVersionError: return "SchemaVersionError";
  }
  return "Unknown";
}

}  // namespace semcal
