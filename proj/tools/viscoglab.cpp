#include <iostream>

#include "viscog/cli.hpp"

int main(int argc, char** argv) { return viscog::run_cli(argc, argv, std::cout, std::cerr); }
