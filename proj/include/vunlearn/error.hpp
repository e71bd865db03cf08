#pragma once

#include <stdexcept>
#include <string>

namespace vunlearn {

enum class Errc {
  RangeOverflow,
  DimMismatch,
  KindMismatch,
  RoundSkew,
  NonBinaryLabel,
  EmptyEffectiveSet,
  Finalized,
  LengthMismatch,
  Unsatisfiable,
  BadShape,
  Empty,
  IndexOutOfRange,
  MalformedKey,
  ZeroModulus,
  BadBatchSize,
  BadParams,
  NoCandidates,
  NoSameClassNeighbor,
  OverlappingRows,
  UnknownOwner,
  MissingSignature,
  BadSignature,
  ScheduleVerifyFailed,
  Parse,
  Io,
};

inline const char* to_string(Errc e) {
  switch (e) {
    case Errc::RangeOverflow: return "RangeOverflow";
    case Errc::DimMismatch: return "DimMismatch";
    case Errc::KindMismatch: return "KindMismatch";
    case Errc::RoundSkew: return "RoundSkew";
    case Errc::NonBinaryLabel: return "NonBinaryLabel";
    case Errc::EmptyEffectiveSet: return "EmptyEffectiveSet";
    case Errc::Finalized: return "Finalized";
    case Errc::LengthMismatch: return "LengthMismatch";
    case Errc::Unsatisfiable: return "Unsatisfiable";
    case Errc::BadShape: return "BadShape";
    case Errc::Empty: return "Empty";
    case Errc::IndexOutOfRange: return "IndexOutOfRange";
    case Errc::MalformedKey: return "MalformedKey";
    case Errc::ZeroModulus: return "ZeroModulus";
    case Errc::BadBatchSize: return "BadBatchSize";
    case Errc::BadParams: return "BadParams";
    case Errc::NoCandidates: return "NoCandidates";
    case Errc::NoSameClassNeighbor: return "NoSameClassNeighbor";
    case Errc::OverlappingRows: return "OverlappingRows";
    case Errc::UnknownOwner: return "UnknownOwner";
    case Errc::MissingSignature: return "MissingSignature";
    case Errc::BadSignature: return "BadSignature";
    case Errc::ScheduleVerifyFailed: return "ScheduleVerifyFailed";
    case Errc::Parse: return "Parse";
    case Errc::Io: return "Io";
  }
  return "Unknown";
}

/// Every failure in the library surfaces as this exception; `code()` is the
/// machine-readable class, `what()` carries the human context.
class Error : public std::runtime_error {
 public:
  Error(Errc code, const std::string& msg)
      : std::runtime_error(std::string(to_string(code)) + ": " + msg), code_(code) {}

  Errc code() const noexcept { return code_; }

 private:
  Errc code_;
};

[[noreturn]] inline void fail(Errc code, const std::string& msg) { throw Error(code, msg); }

inline void require(bool cond, Errc code, const std::string& msg) {
  if (!cond) fail(code, msg);
}

}  // namespace vunlearn
