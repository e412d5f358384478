#include <iostream>

#include "fedlog/cli.hpp"

int main(int argc, char** argv) { return fedlog::cli::run(argc, argv, std::cout, std::cerr); }
