#include <iostream>

#include "normforge/cli.hpp"

int main(int argc, char** argv) { return normforge::run_cli(argc, argv, std::cout, std::cerr); }
