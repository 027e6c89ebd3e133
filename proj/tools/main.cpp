#include <iostream>

#include "anchorcap/cli.hpp"

int main(int argc, char** argv) { return anchorcap::cli::run(argc, argv, std::cout, std::cerr); }
