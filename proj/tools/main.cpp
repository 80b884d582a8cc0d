#include "cli_commands.hpp"

#include <iostream>

int main(int argc, char** argv) { return epglmm::cli::run(argc, argv, std::cout, std::cerr); }
