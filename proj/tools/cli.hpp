#pragma once

#include <string>
#include <vector>

namespace tensorgrade::cli {

/// Runs the command line `args` (without the program name). Returns the
/// process exit status: 0 on success, 1 on a failed command, 2 on bad usage.
int run_cli(const std::vector<std::string>& args);

} // namespace tensorgrade::cli
