#include <iostream>

#include "aesth/cli.hpp"

int main(int argc, char** argv) { return aesth::run_cli(argc, argv, std::cout, std::cerr); }
