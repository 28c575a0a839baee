#include <iostream>

#include "rsknet/cli.hpp"

int main(int argc, char** argv) { return rsknet::cli::run(argc, argv, std::cout, std::cerr); }
