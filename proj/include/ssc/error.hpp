#pragma once

#include <stdexcept>
#include <string>

namespace ssc {

enum class ErrorKind {
  ShapeMismatch,
  DegenerateOutput,
  InvalidArgument,
  OutOfRange,
  NonScalar,
  NonFinite,
  UnknownFilter,
  UnsupportedChannels,
  UnsupportedArchitecture,
  InputTooSmall,
  Divergence,
  BadMagic,
  FormatVersion,
  Corrupt,
  Truncated,
  Io,
  InitializationFailure,
  Empty,
  Config,
};

const char* to_string(ErrorKind kind) noexcept;

// Every failure raised by the library carries a machine-readable kind so the
// CLI can report it on a single line.
class Error : public std::runtime_error {
 public:
  Error(ErrorKind kind, const std::string& what);

  ErrorKind kind() const noexcept { return kind_; }

 private:
  ErrorKind kind_;
};

}  // namespace ssc
