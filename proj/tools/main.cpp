// SPDX-License-Identifier: Apache-2.0
#include "flexquant/cli.hpp"

int main(int argc, char** argv) { return flexquant::cli::run(argc, argv); }
