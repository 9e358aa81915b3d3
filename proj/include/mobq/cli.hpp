#pragma once

#include <string>
#include <vector>

namespace mobq::cli {

// Entry point shared by the mobq binary and the test suite. Exit codes:
// 0 success, 1 usage/config error, 2 numerical failure.
int run(const std::vector<std::string>& args);

}  // namespace mobq::cli
