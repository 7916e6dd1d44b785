// Copyright 2026 The NEAM Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <ostream>
#include <string>
#include <vector>

namespace neam::cli {

/// Exit codes.
inline constexpr int kOk = 0;
inline constexpr int kUsage = 1;
inline constexpr int kDataError = 2;
inline constexpr int kNumerical = 3;

/// Runs one command line (args[0] is the program name). Results go to out,
/// the configuration echo and logs to err.
int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

}  // namespace neam::cli
