#include <iostream>

#include "exitflow/cli.hpp"

int main(int argc, char** argv) { return exitflow::cli::run(argc, argv, std::cout, std::cerr); }
