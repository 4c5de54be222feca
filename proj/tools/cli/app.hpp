#pragma once

#include <iosfwd>
#include <string>
#include <vector>

namespace mimic::cli {

enum ExitCode : int {
  kExitOk = 0,
  kExitInternal = 1,
  kExitUsage = 2,
  kExitData = 3,
  kExitNumeric = 4,
};

/// Parses `args` (without the program name), runs one command and returns
/// its exit code. Messages go to `out` and `err`.
int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

}  // namespace mimic::cli
