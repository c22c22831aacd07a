// Copyright (c) 2026 The analog-video-restore Authors.
//
// This source code is licensed under the Apache License, Version 2.0
// found in the LICENSE file in the root directory of this source tree.

#pragma once

#include <filesystem>
#include <cstdint>
#include <sstream>
#include <stdexcept>
#include <string>
#include <string_view>
#include <utility>

namespace avr {

namespace fs = std::filesystem;

enum class ErrorCode {
  kNotFound,
  kEmptyClip,
  kShapeMismatch,
  kCropTooLarge,
  kIoError,
  kPrecondition,
  kInvalidParam,
  kInsufficientData,
  kShapeError,
  kNumericalError,
  kIncompatibleCheckpoint,
  kExtractorUnavailable,
  kSampleError,
  kFrameTooSmall,
  kNoData,
  kDecoderUnavailable,
};

inline std::string_view error_code_name(ErrorCode code) {
  switch (code) {
    case ErrorCode::kNotFound: return "NotFound";
    case ErrorCode::kEmptyClip: return "EmptyClip";
    case ErrorCode::kShapeMismatch: return "ShapeMismatch";
    case ErrorCode::kCropTooLarge: return "CropTooLarge";
    case ErrorCode::kIoError: return "IoError";
    case ErrorCode::kPrecondition: return "PreconditionViolation";
    case ErrorCode::kInvalidParam: return "InvalidParam";
    case ErrorCode::kInsufficientData: return "InsufficientData";
    case ErrorCode::kShapeError: return "ShapeError";
    case ErrorCode::kNumericalError: return "NumericalError";
    case ErrorCode::kIncompatibleCheckpoint: return "IncompatibleCheckpoint";
    case ErrorCode::kExtractorUnavailable: return "ExtractorUnavailable";
    case ErrorCode::kSampleError: return "SampleError";
    case ErrorCode::kFrameTooSmall: return "FrameTooSmall";
    case ErrorCode::kNoData: return "NoData";
    case ErrorCode::kDecoderUnavailable: return "DecoderUnavailable";
  }
  return "Unknown";
}

// All library failures surface as avr::Error carrying a machine-readable code.
class Error : public std::runtime_error {
 public:
  Error(ErrorCode code, const std::string& message)
      : std::runtime_error(message), code_(code) {}

  ErrorCode code() const noexcept { return code_; }
  std::string_view code_name() const noexcept { return error_code_name(code_); }

 private:
  ErrorCode code_;
};

namespace detail {

template <typename... Args>
std::string concat(Args&&... args) {
  std::ostringstream oss;
  (oss << ... << std::forward<Args>(args));
  return oss.str();
}

}  // namespace detail

template <typename... Args>
[[noreturn]] void fail(ErrorCode code, Args&&... args) {
  throw Error(code, detail::concat(std::forward<Args>(args)...));
}

template <typename... Args>
void require(bool condition, ErrorCode code, Args&&... args) {
  if (!condition) fail(code, std::forward<Args>(args)...);
}

// FNV-1a, 64 bit. Used for config hashes, content addressing and RNG stream
// derivation; stable across platforms.
inline std::uint64_t fnv1a(std::string_view bytes,
                           std::uint64_t h = 0xcbf29ce484222325ULL) {
  for (unsigned char c : bytes) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  return h;
}

inline std::uint64_t splitmix64(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

// Order-sensitive combination of 64-bit keys into one stream seed.
inline std::uint64_t mix_seed(std::uint64_t seed) { return splitmix64(seed); }

template <typename... Rest>
std::uint64_t mix_seed(std::uint64_t seed, std::uint64_t next, Rest... rest) {
  return mix_seed(splitmix64(seed ^ splitmix64(next + 0x632be59bd9b4e019ULL)),
                  static_cast<std::uint64_t>(rest)...);
}

inline std::string hex64(std::uint64_t v) {
  static constexpr char kDigits[] = "0123456789abcdef";
  std::string out(16, '0');
  for (int i = 15; i >= 0; --i) {
    out[static_cast<std::size_t>(i)] = kDigits[v & 0xf];
    v >>= 4;
  }
  return out;
}

}  // namespace avr
