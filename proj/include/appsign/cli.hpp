#pragma once

#include <string>
#include <vector>

namespace appsign {

// Runs the full command-line surface. Exit codes: 0 success, 1 data or
// runtime error, 2 usage error.
int run_cli(const std::vector<std::string>& args);

}  // namespace appsign
