#pragma once

#include <stdexcept>
#include <string>
#include <string_view>

namespace smd {

// Every failure the library reports. The CLI maps these onto exit codes.
enum class ErrorKind {
  NonConvergent,
  NonPositiveDepth,
  BehindCamera,
  ImageTooSmall,
  SizeMismatch,
  TooFewTracks,
  Degenerate,
  DegenerateMotion,
  SignAmbiguous,
  NumericalFailure,
  BadRange,
  DecodeError,
  TooFewFrames,
  InvalidArgument,
  IoError,
};

constexpr std::string_view to_string(ErrorKind kind) {
  switch (kind) {
    case ErrorKind::NonConvergent: return "NonConvergent";
    case ErrorKind::NonPositiveDepth: return "NonPositiveDepth";
    case ErrorKind::BehindCamera: return "BehindCamera";
    case ErrorKind::ImageTooSmall: return "ImageTooSmall";
    case ErrorKind::SizeMismatch: return "SizeMismatch";
    case ErrorKind::TooFewTracks: return "TooFewTracks";
    case ErrorKind::Degenerate: return "Degenerate";
    case ErrorKind::DegenerateMotion: return "DegenerateMotion";
    case ErrorKind::SignAmbiguous: return "SignAmbiguous";
    case ErrorKind::NumericalFailure: return "NumericalFailure";
    case ErrorKind::BadRange: return "BadRange";
    case ErrorKind::DecodeError: return "DecodeError";
    case ErrorKind::TooFewFrames: return "TooFewFrames";
    case ErrorKind::InvalidArgument: return "InvalidArgument";
    case ErrorKind::IoError: return "IoError";
  }
  return "Unknown";
}

class Error : public std::runtime_error {
 public:
  Error(ErrorKind kind, const std::string& what)
      : std::runtime_error(std::string(to_string(kind)) + ": " + what), kind_(kind) {}

  ErrorKind kind() const noexcept { return kind_; }

 private:
  ErrorKind kind_;
};

}  // namespace smd
