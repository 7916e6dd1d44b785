// Copyright 2026 The NEAM Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <array>
#include <cmath>
#include <cstdint>
#include <stdexcept>
#include <string>

namespace neam {

inline constexpr double kPi = 3.14159265358979323846;
inline constexpr double kInvPi = 1.0 / kPi;

/// Lower clamp applied to every cosine that ends up in a denominator.
inline constexpr double kCosEpsilon = 1e-6;
/// Lower bound on microfacet roughness.
inline constexpr double kAlphaMin = 1e-3;

using Rgb = std::array<double, 3>;

enum class ErrorCode {
    OutOfRange,
    DimensionMismatch,
    NonFinite,
    BadHeader,
    BadMagic,
    Truncated,
    VersionUnsupported,
    ChecksumMismatch,
    RefusedTooLarge,
    IoError,
    ParseError,
    Usage,
};

const char* to_string(ErrorCode code);

/// Exception type carried by every failing library call.
class Error : public std::runtime_error {
public:
    Error(ErrorCode code, const std::string& what)
        : std::runtime_error(std::string(to_string(code)) + ": " + what), code_(code) {}

    ErrorCode code() const noexcept { return code_; }

private:
    ErrorCode code_;
};

/// splitmix64 step; used to derive independent seeds from structured keys.
inline std::uint64_t mix_seed(std::uint64_t x) {
    x += 0x9e3779b97f4a7c15ULL;
    x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
    x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
    return x ^ (x >> 31);
}

inline std::uint64_t derive_seed(std::uint64_t base, std::uint64_t a, std::uint64_t b = 0,
                                 std::uint64_t c = 0) {
    return mix_seed(mix_seed(mix_seed(mix_seed(base) ^ a) ^ b) ^ c);
}

}  // namespace neam
