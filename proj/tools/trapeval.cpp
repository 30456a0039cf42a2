#include <iostream>

#include "trapeval/cli.hpp"

int main(int argc, char** argv) { return trapeval::cli::run(argc, argv, std::cout, std::cerr); }
