#include "ssc/error.hpp"

namespace ssc {

const char* to_string(ErrorKind kind) noexcept {
  switch (kind) {
    case ErrorKind::ShapeMismatch: return "shape_mismatch";
    case ErrorKind::DegenerateOutput: return "degenerate_output";
    case ErrorKind::InvalidArgument: return "invalid_argument";
    case ErrorKind::OutOfRange: return "out_of_range";
    case ErrorKind::NonScalar: return "non_scalar";
    case ErrorKind::NonFinite: return "non_finite";
    case ErrorKind::UnknownFilter: return "unknown_filter";
    case ErrorKind::UnsupportedChannels: return "unsupported_channels";
    case ErrorKind::UnsupportedArchitecture: return "unsupported_architecture";
    case ErrorKind::InputTooSmall: return "input_too_small";
    case ErrorKind::Divergence: return "divergence";
    case ErrorKind::BadMagic: return "bad_magic";
    case ErrorKind::FormatVersion: return "format_version";
    case ErrorKind::Corrupt: return "corrupt";
    case ErrorKind::Truncated: return "truncated";
    case ErrorKind::Io: return "io";
    case ErrorKind::InitializationFailure: return "initialization_failure";
    case ErrorKind::Empty: return "empty";
    case ErrorKind::Config: return "config";
  }
  return "unknown";
}

Error::Error(ErrorKind kind, const std::string& what)
    : std::runtime_error(what), kind_(kind) {}

}  // namespace ssc
