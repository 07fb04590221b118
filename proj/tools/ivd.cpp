#include <iostream>

#include "ivd/cli.hpp"

int main(int argc, char** argv) { return ivd::run_cli(argc, argv, std::cout, std::cerr); }
