#pragma once

#include <string>
#include <vector>

namespace llmar {

// Entry point for the llmar tool. Exit codes: 0 success, 2 configuration or
// usage error, 3 data error, 4 provider error, 5 internal error.
int run_cli(int argc, const char* const* argv);

// Convenience overload for in-process invocation; args exclude argv[0].
int run_cli(const std::vector<std::string>& args);

}  // namespace llmar
