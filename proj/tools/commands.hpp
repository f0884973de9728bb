#pragma once

#include <ostream>
#include <string>
#include <vector>

namespace jsfusion::cli {

/// Parses `args` (without the program name) and runs one subcommand.
/// Returns the process exit code: 0 success, 1 runtime failure,
/// 2 validation failure.
int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

}  // namespace jsfusion::cli
