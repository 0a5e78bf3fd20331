#include "kmpc/cli.hpp"

#include <iostream>

int main(int argc, char** argv) { return kmpc::run_cli(argc, argv, std::cout, std::cerr); }
