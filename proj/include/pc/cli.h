#pragma once

#include <iosfwd>

namespace pc::cli {

inline constexpr int kExitOk = 0;
inline constexpr int kExitFailure = 1;
inline constexpr int kExitUsage = 2;

/// Entry point of the `promptcl` tool. Human-readable text goes to `out`; the
/// final line of `out` is the command's JSON report. Diagnostics go to `err`.
int run(int argc, const char* const* argv, std::ostream& out, std::ostream& err);
int run(int argc, const char* const* argv);

}  // namespace pc::cli
