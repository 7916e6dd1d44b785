// Copyright 2026 The NEAM Authors
// SPDX-License-Identifier: Apache-2.0

#include "neam/common.hpp"

namespace neam {

const char* to_string(ErrorCode code) {
    switch (code) {
        case ErrorCode::OutOfRange: return "OutOfRange";
        case ErrorCode::DimensionMismatch: return "DimensionMismatch";
        case ErrorCode::NonFinite: return "NonFinite";
        case ErrorCode::BadHeader: return "BadHeader";
        case ErrorCode::BadMagic: return "BadMagic";
        case ErrorCode::Truncated: return "Truncated";
        case ErrorCode::VersionUnsupported: return "VersionUnsupported";
        case ErrorCode::ChecksumMismatch: return "ChecksumMismatch";
        case ErrorCode::RefusedTooLarge: return "RefusedTooLarge";
        case ErrorCode::IoError: return "IoError";
        case ErrorCode::ParseError: return "ParseError";
        case ErrorCode::Usage: return "Usage";
    }
    return "Unknown";
}

}  // namespace neam
