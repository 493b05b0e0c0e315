#pragma once

#include <ostream>

namespace organocc {

inline constexpr int kExitOk = 0;
inline constexpr int kExitUsage = 1;
inline constexpr int kExitData = 2;
inline constexpr int kExitNumeric = 3;

// Whole command line: parses, dispatches, maps errors to exit codes. Normal
// output goes to `out`; errors are written to `err` as one JSON object.
int run_cli(int argc, const char* const* argv, std::ostream& out, std::ostream& err);

}  // namespace organocc
