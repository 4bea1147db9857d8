// SPDX-License-Identifier: Apache-2.0
#include <iostream>

#include "mmt/cli/cli.hpp"

int main(int argc, char** argv) { return mmt::cli::run(argc, argv, std::cout, std::cerr); }
