#pragma once

#include <stdexcept>
#include <string>
#include <string_view>

namespace seqloc {

enum class Errc {
  InvalidConfig,
  NonPositiveDepth,
  NonPositiveDisparity,
  CorruptDataset,
  BadGeometry,
  SequenceTooShort,
  MissingVO,
  NoPath,
  EmptyCorrespondences,
  OutOfBounds,
  DegenerateGeometry,
  NoConsensus,
  TooFewValidDepths,
  NonFiniteGradient,
  Io,
};

inline std::string_view errc_name(Errc code) {
  switch (code) {
    case Errc::InvalidConfig: return "InvalidConfig";
    case Errc::NonPositiveDepth: return "NonPositiveDepth";
    case Errc::NonPositiveDisparity: return "NonPositiveDisparity";
    case Errc::CorruptDataset: return "CorruptDataset";
    case Errc::BadGeometry: return "BadGeometry";
    case Errc::SequenceTooShort: return "SequenceTooShort";
    case Errc::MissingVO: return "MissingVO";
    case Errc::NoPath: return "NoPath";
    case Errc::EmptyCorrespondences: return "EmptyCorrespondences";
    case Errc::OutOfBounds: return "OutOfBounds";
    case Errc::DegenerateGeometry: return "DegenerateGeometry";
    case Errc::NoConsensus: return "NoConsensus";
    case Errc::TooFewValidDepths: return "TooFewValidDepths";
    case Errc::NonFiniteGradient: return "NonFiniteGradient";
    case Errc::Io: return "Io";
  }
  return "Unknown";
}

/// Single exception type for the library; `code()` identifies the failure.
class Error : public std::runtime_error {
 public:
  Error(Errc code, const std::string& what)
      : std::runtime_error(std::string(errc_name(code)) + ": " + what), code_(code) {}

  Errc code() const noexcept { return code_; }

 private:
  Errc code_;
};

}  // namespace seqloc
