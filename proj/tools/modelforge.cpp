#include <iostream>

#include "modelforge/cli.hpp"

int main(int argc, char** argv) { return modelforge::cli::run(argc, argv, std::cout, std::cerr); }
