// Copyright 2026 The IVT Authors
// SPDX-License-Identifier: Apache-2.0

// The `ivt` command line: gradcheck, train, eval, bench and scene export.
//
// Exit codes: 0 success, 2 usage or configuration error, 3 numeric failure,
// 1 anything else.

#pragma once

#include <iosfwd>
#include <string>
#include <vector>

namespace ivt::cli {

inline constexpr int kExitOk = 0;
inline constexpr int kExitFailure = 1;
inline constexpr int kExitUsage = 2;
inline constexpr int kExitNumeric = 3;

/// args excludes the program name.
int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

}  // namespace ivt::cli
