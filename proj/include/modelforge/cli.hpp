#pragma once

// Command-line entry point: build, transform, run, render, roundtrip-check,
// inspect. Exit codes: 0 success, 1 usage error, 2 data or parse error,
// 3 numeric check failure.

#include <iosfwd>

namespace modelforge::cli {

inline constexpr int kExitOk = 0;
inline constexpr int kExitUsage = 1;
inline constexpr int kExitData = 2;
inline constexpr int kExitCheck = 3;

int run(int argc, const char* const* argv, std::ostream& out, std::ostream& err);

}  // namespace modelforge::cli
