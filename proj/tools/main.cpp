#include <iostream>

#include "mgtood/cli.hpp"

int main(int argc, char** argv) { return mgtood::cli::run(argc, argv, std::cout, std::cerr); }
