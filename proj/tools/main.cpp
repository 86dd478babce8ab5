// SPDX-License-Identifier: Apache-2.0
#include <iostream>

#include "fineformer/commands.hpp"

int main(int argc, char** argv) { return fineformer::run_cli(argc, argv, std::cout, std::cerr); }
