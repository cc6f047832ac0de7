// SPDX-License-Identifier: Apache-2.0

#include <iostream>

#include "detrack/cli.hpp"

int main(int argc, char** argv) { return detrack::run_cli(argc, argv, std::cout, std::cerr); }
