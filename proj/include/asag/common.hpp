#pragma once

#include <cstdint>
#include <span>
#include <stdexcept>
#include <string>
#include <string_view>

#include <json.hpp>

namespace asag {

using Json = nlohmann::ordered_json;

enum class ErrorCode {
  // records
  MissingField,
  InvalidFieldType,
  NonPositiveMaxPoints,
  PointsOutOfRange,
  DuplicateRecordId,
  RegraderIsOfficialGrader,
  FileUnreadable,
  MalformedRow,
  // splitter
  EmptyStore,
  InsufficientCourses,
  UnknownRecordId,
  InvalidConfig,
  // graders
  GraderUnavailable,
  MalformedResponse,
  Timeout,
  MissingReplayEntry,
  // metrics / benchmark
  EmptySeries,
  LengthMismatch,
  TooShort,
  UnjoinedTriple,
  ZeroBaseline,
  AllRowsExcluded,
  // alerting
  MissingModelGrade,
  MissingGraderId,
  UnknownAlert,
  IllegalTransition,
  InvalidAdjustedPoints,
  // service
  ValidationFailed,
  DuplicateBatch,
  UnknownBatch,
  UnknownDataset,
  // generic
  InvalidArgument,
  IoError,
};

inline std::string_view to_string(ErrorCode code) {
  switch (code) {
    case ErrorCode::MissingField: return "MissingField";
    case ErrorCode::InvalidFieldType: return "InvalidFieldType";
    case ErrorCode::NonPositiveMaxPoints: return "NonPositiveMaxPoints";
    case ErrorCode::PointsOutOfRange: return "PointsOutOfRange";
    case ErrorCode::DuplicateRecordId: return "DuplicateRecordId";
    case ErrorCode::RegraderIsOfficialGrader: return "RegraderIsOfficialGrader";
    case ErrorCode::FileUnreadable: return "FileUnreadable";
    case ErrorCode::MalformedRow: return "MalformedRow";
    case ErrorCode::EmptyStore: return "EmptyStore";
    case ErrorCode::InsufficientCourses: return "InsufficientCourses";
    case ErrorCode::UnknownRecordId: return "UnknownRecordId";
    case ErrorCode::InvalidConfig: return "InvalidConfig";
    case ErrorCode::GraderUnavailable: return "GraderUnavailable";
    case ErrorCode::MalformedResponse: return "MalformedResponse";
    case ErrorCode::Timeout: return "Timeout";
    case ErrorCode::MissingReplayEntry: return "MissingReplayEntry";
    case ErrorCode::EmptySeries: return "EmptySeries";
    case ErrorCode::LengthMismatch: return "LengthMismatch";
    case ErrorCode::TooShort: return "TooShort";
    case ErrorCode::UnjoinedTriple: return "UnjoinedTriple";
    case ErrorCode::ZeroBaseline: return "ZeroBaseline";
    case ErrorCode::AllRowsExcluded: return "AllRowsExcluded";
    case ErrorCode::MissingModelGrade: return "MissingModelGrade";
    case ErrorCode::MissingGraderId: return "MissingGraderId";
    case ErrorCode::UnknownAlert: return "UnknownAlert";
    case ErrorCode::IllegalTransition: return "IllegalTransition";
    case ErrorCode::InvalidAdjustedPoints: return "InvalidAdjustedPoints";
    case ErrorCode::ValidationFailed: return "ValidationFailed";
    case ErrorCode::DuplicateBatch: return "DuplicateBatch";
    case ErrorCode::UnknownBatch: return "UnknownBatch";
    case ErrorCode::UnknownDataset: return "UnknownDataset";
    case ErrorCode::InvalidArgument: return "InvalidArgument";
    case ErrorCode::IoError: return "IoError";
  }
  return "Unknown";
}

// I/O failures map to CLI exit code 2, everything else to 1.
inline bool is_io_error(ErrorCode code) {
  return code == ErrorCode::FileUnreadable || code == ErrorCode::IoError;
}

class Error : public std::runtime_error {
 public:
  Error(ErrorCode code, const std::string& message)
      : std::runtime_error(std::string(to_string(code)) + ": " + message), code_(code) {}

  ErrorCode code() const noexcept { return code_; }

 private:
  ErrorCode code_;
};

// 64-bit FNV-1a. Used for stable ids and content hashes, never for security.
inline std::uint64_t fnv1a64(std::string_view data, std::uint64_t hash = 0xcbf29ce484222325ULL) {
  for (unsigned char c : data) {
    hash ^= c;
    hash *= 0x100000001b3ULL;
  }
  return hash;
}

inline std::uint64_t splitmix64(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

inline std::string hex64(std::uint64_t v) {
  static constexpr char digits[] = "0123456789abcdef";
  std::string out(16, '0');
  for (int i = 15; i >= 0; --i) {
    out[static_cast<std::size_t>(i)] = digits[v & 0xF];
    v >>= 4;
  }
  return out;
}

// Pairwise (cascade) summation; error grows O(log n) instead of O(n).
inline double pairwise_sum(std::span<const double> values) {
  constexpr std::size_t kBlock = 16;
  if (values.size() <= kBlock) {
    double s = 0.0;
    for (double v : values) s += v;
    return s;
  }
  const std::size_t half = values.size() / 2;
  return pairwise_sum(values.first(half)) + pairwise_sum(values.subspan(half));
}

}  // namespace asag
