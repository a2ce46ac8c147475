#include "cli.hpp"

#include <iostream>

int main(int argc, char** argv) { return gsavatar::run_cli(argc, argv, std::cout, std::cerr); }
