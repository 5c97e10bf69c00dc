#pragma once

#include <iosfwd>

namespace cpret::cli {

/// Exit codes: 0 success, 1 usage error, 2 data error, 3 numeric failure.
enum ExitCode { kOk = 0, kUsage = 1, kData = 2, kNumeric = 3 };

/// Runs one command line. Normal output goes to `out`, diagnostics to `err`.
int run(int argc, const char* const* argv, std::ostream& out, std::ostream& err);
int run(int argc, const char* const* argv);

}  // namespace cpret::cli
