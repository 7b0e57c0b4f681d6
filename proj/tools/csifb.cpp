#include <iostream>

#include "csifb/cli.hpp"

int main(int argc, char** argv) { return csifb::cli::run_cli(argc, argv, std::cout, std::cerr); }
