#pragma once

#include <iosfwd>
#include <string>
#include <vector>

namespace iblab::cli {

enum ExitCode : int {
  kOk = 0,
  kFailure = 1,
  kInputError = 2,
  kDiverged = 3,
};

/// Output root when a command gets no --out; defaults to ./iblab-out.
inline constexpr const char* kOutputRootEnv = "IBLAB_OUTPUT_ROOT";

/// Runs one command line (without the program name) and returns its exit
/// code. Progress goes to `out`, diagnostics to `err`.
int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

}  // namespace iblab::cli
