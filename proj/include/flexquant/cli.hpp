// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <string>
#include <vector>

namespace flexquant::cli {

// Entry point shared by the flexquant binary and in-process callers
// (tests drive the CLI through this). `args` excludes the program name.
int run(const std::vector<std::string>& args);

int run(int argc, const char* const* argv);

} // namespace flexquant::cli
