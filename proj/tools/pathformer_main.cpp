// SPDX-License-Identifier: Apache-2.0
#include <iostream>

#include "pathformer/cli.hpp"

int main(int argc, char** argv) { return pathformer::cli::run_command(argc, argv, std::cout, std::cerr); }
