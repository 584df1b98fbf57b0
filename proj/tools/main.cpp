#include "sct/cli.hpp"

#include <iostream>

int main(int argc, char** argv) { return sct::run_cli(argc, argv, std::cout, std::cerr); }
