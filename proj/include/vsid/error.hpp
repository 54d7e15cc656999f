#pragma once

#include <stdexcept>
#include <string>
#include <string_view>

namespace vsid {

enum class ErrorCode {
  BadMagic,
  Truncated,
  VersionMismatch,
  ZeroEmbedding,
  NoInteractions,
  InvalidTemperature,
  NumericalOverflow,
  InvalidPrior,
  EnumerationTooLarge,
  CorruptCheckpoint,
  EmptySlice,
  ShapeMismatch,
  InvalidArgument,
  Io,
};

std::string_view to_string(ErrorCode code);

class Error : public std::runtime_error {
 public:
  Error(ErrorCode code, const std::string& what)
      : std::runtime_error(std::string(to_string(code)) + ": " + what), code_(code) {}

  ErrorCode code() const noexcept { return code_; }

 private:
  ErrorCode code_;
};

// Throws InvalidArgument when `ok` is false.
inline void require(bool ok, const std::string& what) {
  if (!ok) throw Error(ErrorCode::InvalidArgument, what);
}

}  // namespace vsid
