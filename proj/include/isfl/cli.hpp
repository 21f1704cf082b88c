#pragma once

#include <string>
#include <vector>

namespace isfl {

// Parses and runs one command. Exit codes: 0 success, 2 validation error,
// 3 runtime/numeric failure.
int run_cli(const std::vector<std::string>& args);

} // namespace isfl
