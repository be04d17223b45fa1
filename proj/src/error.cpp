#include "ant/error.hpp"

namespace ant {

const char* to_string(ErrorCode code) noexcept {
  switch (code) {
    case ErrorCode::InvalidArgument: return "InvalidArgument";
    case ErrorCode::Io: return "Io";
    case ErrorCode::EmptyFrame: return "EmptyFrame";
    case ErrorCode::ShapeMismatch: return "ShapeMismatch";
    case ErrorCode::DegenerateScene: return "DegenerateScene";
    case ErrorCode::DegenerateAugmentation: return "DegenerateAugmentation";
    case ErrorCode::EmptyVocabulary: return "EmptyVocabulary";
    case ErrorCode::LengthMismatch: return "LengthMismatch";
    case ErrorCode::NoClasses: return "NoClasses";
    case ErrorCode::MissingPaletteEntry: return "MissingPaletteEntry";
    case ErrorCode::NonFiniteLoss: return "NonFiniteLoss";
    case ErrorCode::VersionMismatch: return "VersionMismatch";
    case ErrorCode::CorruptCheckpoint: return "CorruptCheckpoint";
    case ErrorCode::NotFound: return "NotFound";
    case ErrorCode::Conflict: return "Conflict";
    case ErrorCode::InvalidLabel: return "InvalidLabel";
  }
  return "Unknown";
}

Error::Error(ErrorCode code, const std::string& message)
    : std::runtime_error(std::string(to_string(code)) + ": " + message), code_(code) {}

void fail(ErrorCode code, const std::string& message) { throw Error(code, message); }

}  // namespace ant
