#pragma once

#include <iosfwd>
#include <string>
#include <vector>

namespace lyapnet::cli {

/// Runs the command line `args` (without the program name). Exit codes:
/// 0 success, 1 runtime failure, 2 invalid flags.
int run_cli(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

}  // namespace lyapnet::cli
