#include <iostream>

#include "madmil/commands.hpp"

int main(int argc, char** argv) { return madmil::run_cli(argc, argv, std::cout, std::cerr); }
