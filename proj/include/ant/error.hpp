#pragma once

#include <stdexcept>
#include <string>

namespace ant {

enum class ErrorCode {
  InvalidArgument,
  Io,
  EmptyFrame,
  ShapeMismatch,
  DegenerateScene,
  DegenerateAugmentation,
  EmptyVocabulary,
  LengthMismatch,
  NoClasses,
  MissingPaletteEntry,
  NonFiniteLoss,
  VersionMismatch,
  CorruptCheckpoint,
  NotFound,
  Conflict,
  InvalidLabel,
};

const char* to_string(ErrorCode code) noexcept;

// Every failure the library reports carries one of the codes above so the CLI
// and the HTTP service can map it to an exit code / status.
class Error : public std::runtime_error {
 public:
  Error(ErrorCode code, const std::string& message);

  ErrorCode code() const noexcept { return code_; }

 private:
  ErrorCode code_;
};

[[noreturn]] void fail(ErrorCode code, const std::string& message);

inline void require(bool condition, ErrorCode code, const std::string& message) {
  if (!condition) fail(code, message);
}

}  // namespace ant
