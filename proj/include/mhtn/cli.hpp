#pragma once

#include <string>
#include <vector>

namespace mhtn {

// Entry point shared by the binary and the tests.
// Exit codes: 0 success, 1 usage/config error, 2 runtime/numeric failure.
int cli_run(const std::vector<std::string>& args);

}  // namespace mhtn
