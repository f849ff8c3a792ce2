#pragma once

#include <iosfwd>
#include <string>
#include <vector>

namespace feddap {

/// Exit codes: 0 success, 1 usage error, 2 config error, 3 training
/// divergence, 4 unexpected internal error.
inline constexpr int kExitOk = 0;
inline constexpr int kExitUsage = 1;
inline constexpr int kExitConfig = 2;
inline constexpr int kExitDivergence = 3;
inline constexpr int kExitInternal = 4;

/// Dispatches one CLI invocation (args exclude the program name). All
/// output goes through the streams so tests can capture it.
int run_cli(const std::vector<std::string>& args, std::ostream& out,
            std::ostream& err);

int run_cli(int argc, char** argv);

}  // namespace feddap
