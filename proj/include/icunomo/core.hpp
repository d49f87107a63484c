#pragma once

// Error type, seeded random streams and hashing shared by every module.

#include <cstdint>
#include <optional>
#include <random>
#include <stdexcept>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

namespace icunomo {

enum class ErrorCode {
  MissingColumn,
  ParseError,
  EmptyFile,
  InvalidTimestamp,
  InsufficientDonors,
  ConstantColumn,
  OutOfPhysiologicRange,
  SingleClass,
  InsufficientSamples,
  KExceedsDimensions,
  NonConvergence,
  SingularDesign,
  TooFewInstances,
  MissingFeature,
  NoEvents,
  NoPositives,
  NoComparablePairs,
  DegenerateSample,
  DegenerateRange,
  IncompleteBundle,
  SchemaMismatch,
  InvalidConfig,
  InvalidArgument,
  IoError,
};

inline const char* to_string(ErrorCode c) {
  switch (c) {
    case ErrorCode::MissingColumn: return "MissingColumn";
    case ErrorCode::ParseError: return "ParseError";
    case ErrorCode::EmptyFile: return "EmptyFile";
    case ErrorCode::InvalidTimestamp: return "InvalidTimestamp";
    case ErrorCode::InsufficientDonors: return "InsufficientDonors";
    case ErrorCode::ConstantColumn: return "ConstantColumn";
    case ErrorCode::OutOfPhysiologicRange: return "OutOfPhysiologicRange";
    case ErrorCode::SingleClass: return "SingleClass";
    case ErrorCode::InsufficientSamples: return "InsufficientSamples";
    case ErrorCode::KExceedsDimensions: return "KExceedsDimensions";
    case ErrorCode::NonConvergence: return "NonConvergence";
    case ErrorCode::SingularDesign: return "SingularDesign";
    case ErrorCode::TooFewInstances: return "TooFewInstances";
    case ErrorCode::MissingFeature: return "MissingFeature";
    case ErrorCode::NoEvents: return "NoEvents";
    case ErrorCode::NoPositives: return "NoPositives";
    case ErrorCode::NoComparablePairs: return "NoComparablePairs";
    case ErrorCode::DegenerateSample: return "DegenerateSample";
    case ErrorCode::DegenerateRange: return "DegenerateRange";
    case ErrorCode::IncompleteBundle: return "IncompleteBundle";
    case ErrorCode::SchemaMismatch: return "SchemaMismatch";
    case ErrorCode::InvalidConfig: return "InvalidConfig";
    case ErrorCode::InvalidArgument: return "InvalidArgument";
    case ErrorCode::IoError: return "IoError";
  }
  return "Unknown";
}

/// Every failure in the library surfaces as an Error carrying a code plus
/// optional context (data row for parse errors, offending names, iteration).
class Error : public std::runtime_error {
 public:
  Error(ErrorCode code, const std::string& what)
      : std::runtime_error(compose(code, what)), code_(code), detail_(what) {}

  ErrorCode code() const noexcept { return code_; }
  const std::string& detail() const noexcept { return detail_; }  // message without the code prefix

  std::optional<std::size_t> row;        // 1-based data row
  std::optional<std::size_t> iteration;  // solver or elimination step
  std::vector<std::string> names;        // offending columns / features
  std::string stage;                     // set when propagated by the pipeline

  Error& with_row(std::size_t r) { row = r; return *this; }
  Error& with_iteration(std::size_t i) { iteration = i; return *this; }
  Error& with_names(std::vector<std::string> n) { names = std::move(n); return *this; }

 private:
  static std::string compose(ErrorCode code, const std::string& what) {
    return std::string(to_string(code)) + ": " + what;
  }
  ErrorCode code_;
  std::string detail_;
};

// ---------------------------------------------------------------------------
// Seeds and streams

using Rng = std::mt19937_64;

inline std::uint64_t splitmix64(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

inline std::uint64_t fnv1a64(std::string_view s) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char c : s) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  return h;
}

/// Independent substream seed: the same (seed, stream) pair always yields the
/// same child seed, so per-item work can run in any order or thread.
inline std::uint64_t derive_seed(std::uint64_t seed, std::uint64_t stream) {
  return splitmix64(splitmix64(seed) ^ splitmix64(stream + 0x632be59bd9b4e019ULL));
}

inline std::uint64_t derive_seed(std::uint64_t seed, std::string_view label) {
  return derive_seed(seed, fnv1a64(label));
}

inline Rng make_rng(std::uint64_t seed) {
  std::seed_seq seq{static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32)};
  return Rng(seq);
}

inline double uniform01(Rng& rng) {
  // 53 random mantissa bits, in [0, 1).
  return static_cast<double>(rng() >> 11) * 0x1.0p-53;
}

inline double uniform(Rng& rng, double lo, double hi) { return lo + (hi - lo) * uniform01(rng); }

inline std::size_t uniform_index(Rng& rng, std::size_t n) {
  return std::uniform_int_distribution<std::size_t>(0, n - 1)(rng);
}

/// In-place Fisher-Yates with the portable index draw above.
template <class It>
void shuffle(It first, It last, Rng& rng) {
  auto n = static_cast<std::size_t>(last - first);
  for (std::size_t i = n; i > 1; --i) {
    std::size_t j = uniform_index(rng, i);
    std::swap(first[i - 1], first[j]);
  }
}

inline std::string hex64(std::uint64_t v) {
  static const char* digits = "0123456789abcdef";
  std::string out(16, '0');
  for (int i = 15; i >= 0; --i) {
    out[static_cast<std::size_t>(i)] = digits[v & 0xf];
    v >>= 4;
  }
  return out;
}

}  // namespace icunomo
