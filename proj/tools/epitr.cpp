#include <iostream>

#include "epitr/commands.hpp"

int main(int argc, char** argv) { return epitr::cli::run_cli(argc, argv, std::cout, std::cerr); }
