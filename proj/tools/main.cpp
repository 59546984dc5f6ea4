#include <iostream>

#include "bsvd/cli.hpp"

int main(int argc, char** argv) { return bsvd::run_cli(argc, argv, std::cout, std::cerr); }
